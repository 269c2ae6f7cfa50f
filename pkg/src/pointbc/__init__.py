"""Object-centric point-cloud behavior cloning on a toy tabletop simulator.

Pipeline: RGB-D frames are segmented into per-object masks, lifted to
3D point clouds, expressed in the robot base frame, and tokenized by
farthest-point-sampled local groups.  A transformer policy with a
Gaussian-mixture action head is behavior-cloned from scripted
demonstrations and evaluated under background, camera, and object
variations.
"""

__version__ = "0.1.0"
