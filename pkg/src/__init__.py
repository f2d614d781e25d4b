"""
Adaptive NOMA/OMA Age-of-Information Scheduling Package
"""

__version__ = "0.1.0"

# Only export what's actually needed by the package
__all__ = []
