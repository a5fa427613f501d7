from hypothesis import settings

# Property tests draw from a fixed seed so every run checks the same cases.
settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")
