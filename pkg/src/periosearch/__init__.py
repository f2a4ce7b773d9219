"""Contrastive language-image retrieval for periodontal radiographs.

Submodules:

- ``autodiff``: 2-D matrix reverse-mode differentiation core
- ``encoders``: text and image encoders plus embedding / checkpoint IO
- ``loss``: symmetric contrastive objective with similarity-derived targets
- ``augment``: caption templating and image perturbations
- ``synthdata``: labeled synthetic radiograph corpus generator
- ``training``: batching, SGD loop, metrics log
- ``retrieval``: exact cosine search over stored embeddings
- ``evaluation``: ranking metrics, agreement statistics, report files
- ``service``: HTTP query service
- ``cli``: command-line front end over the pipeline
"""

__version__ = "0.1.0"
