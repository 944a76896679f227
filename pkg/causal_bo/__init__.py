"""
causal_bo - 因果ベイズ最適化（観測データと介入を組み合わせた最適介入探索）
"""

__version__ = "0.1.0"
