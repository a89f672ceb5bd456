# Test fixtures
