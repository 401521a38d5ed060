#!/usr/bin/env python

# This file is part of metab. metab is free software: you can
# redistribute it and/or modify it under the terms of the GNU General Public
# License as published by the Free Software Foundation, version 2.
#
# This program is distributed in the hope that it will be useful, but WITHOUT
# ANY WARRANTY; without even the implied warranty of MERCHANTABILITY or FITNESS
# FOR A PARTICULAR PURPOSE.  See the GNU General Public License for more
# details.
#
# You should have received a copy of the GNU General Public License
# along with this program; if not, write to the Free Software
# Foundation, Inc., 59 Temple Place, Suite 330, Boston, MA  02111-1307  USA

from setuptools import setup, find_packages

setup(name='metab',
      version='0.1.0',
      description='metab: maximum entropy densities from tabulated data',
      packages=find_packages(),
      package_data={'metab': ['data/*']},
      python_requires='>=3.8',
      entry_points={'console_scripts': ['metab = metab.cli:main']},
      install_requires=['numpy>=1.17', 'scipy>=1.4', 'pandas>=1.3',
                        'PyYAML', 'progressbar2']
      )
