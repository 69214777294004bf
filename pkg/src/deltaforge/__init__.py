"""deltaforge: human-in-the-loop raster classification and vector extraction
for OpenStreetMap natural features."""

__version__ = "0.1.0"
