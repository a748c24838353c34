# SPDX-License-Identifier: GPL-3.0+

import logging

log = logging.getLogger('fracseir_client')
logging.basicConfig(level=logging.INFO)
