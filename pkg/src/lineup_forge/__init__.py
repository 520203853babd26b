"""Sample mix-up detection and correction for genotype and expression data from F2 crosses."""
from .config import Thresholds
from .model import (DataError, Dataset, ExpressionSet, GeneticMap, Genotype, GenotypeMatrix, PlateLayout,
                    ProbeAnnotation, RelabelDecision, SimilarityMatrix)

__version__ = "0.1.0"

__all__ = ["DataError", "Dataset", "ExpressionSet", "GeneticMap", "Genotype", "GenotypeMatrix", "PlateLayout",
           "ProbeAnnotation", "RelabelDecision", "SimilarityMatrix", "Thresholds", "__version__"]
