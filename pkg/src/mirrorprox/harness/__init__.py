"""Instance generators, file formats, experiment drivers and the command line."""
