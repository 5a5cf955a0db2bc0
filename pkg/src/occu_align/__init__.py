"""Alignment of German job titles with KldB 2010 and ISCED 2011."""

__version__ = "0.1.0"
