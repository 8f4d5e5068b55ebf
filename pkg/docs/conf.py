# -*- coding: utf-8 -*-
#
# ehrcontrast documentation build configuration file.

import os
import sys

sys.path.insert(0, os.path.abspath(
    os.path.join(os.path.dirname(__file__), '..')
))

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.todo',
    'sphinx.ext.viewcode',
    'sphinx.ext.autosummary',
    'numpydoc',
]

numpydoc_show_class_members = False

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = u'ehrcontrast'
copyright = u'2026, ehrcontrast developers'

version = '0.1'
release = '0.1'

exclude_patterns = ['_build']
pygments_style = 'sphinx'

html_theme = 'default'
html_static_path = []
htmlhelp_basename = 'ehrcontrastdoc'

latex_documents = [
  ('index', 'ehrcontrast.tex', u'ehrcontrast Documentation',
   u'ehrcontrast developers', 'manual'),
]

man_pages = [
    ('index', 'ehrcontrast', u'ehrcontrast Documentation',
     [u'ehrcontrast developers'], 1)
]
