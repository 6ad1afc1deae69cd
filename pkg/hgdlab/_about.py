"""
hgd-lab version and metadata.
"""

__version__ = "0.3.0"
__title__ = "hgd-lab"
__description__ = "Desk-scale laboratory for guided denoisers as a defense against adversarial images"
__license__ = "AGPL-3.0"

# Version info
VERSION_MAJOR = 0
VERSION_MINOR = 3
VERSION_PATCH = 0
VERSION_INFO = (VERSION_MAJOR, VERSION_MINOR, VERSION_PATCH)
