from hypothesis import settings

# Property tests draw from a fixed corpus so suite outcomes are reproducible.
settings.register_profile("deterministic", derandomize=True)
settings.load_profile("deterministic")
