# Sphinx configuration for the toolnav docs.

import os
import sys
sys.path.insert(0, os.path.abspath('..'))

# Docstrings are Google style (napoleon); class docs merge the class and
# __init__ docstrings.
autoclass_content = 'both'
autodoc_member_order = 'bysource'
default_role = 'any'

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.viewcode',
              'sphinx.ext.napoleon', 'sphinx_autodoc_annotation']

master_doc = 'index'
source_suffix = '.rst'
exclude_patterns = ['_build']

project = 'toolnav'
author = 'toolnav developers'
copyright = '2026, ' + author
version = release = '1.0.0'

pygments_style = 'sphinx'
html_theme = 'alabaster'
htmlhelp_basename = 'toolnavdoc'

man_pages = [
    (master_doc, 'toolnav', 'toolnav Documentation', [author], 1)
]
