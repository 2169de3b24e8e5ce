"""Domain models: scenes, density maps, curriculum parameters, networks and training records"""
