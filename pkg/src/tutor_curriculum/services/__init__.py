"""Domain engines: density maps, curriculum math, networks, training, scene synthesis and experiments"""
