"""AirBone two-stage air/bone conduction voice authentication."""
