"""Planning services: maps, distance fields, search, optimization layers and the simulator."""
