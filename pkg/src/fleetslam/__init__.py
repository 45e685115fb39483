"""fleetslam: distributed multi-robot SLAM back-end.

Subpackages follow the processing pipeline: `geometry` (rigid-body math),
`pose_graph` (data model, datasets, metrics), `pcm` (robust loop-closure
selection), `dpgo` (distributed pose-graph optimization), `mesh_deform`
(deformation-graph mesh correction), `multirobot` (communication protocol
simulation), and `cli` (experiment harness).
"""

__version__ = "0.1.0"
