from hypothesis import settings

# first calls into the kernels include JIT compilation
settings.register_profile("aclsim", deadline=None)
settings.load_profile("aclsim")
