# SPDX-License-Identifier: GPL-3.0+

import logging

from fracseir.processor.configuration import config

log = logging.getLogger('fracseir_processor')
logging.basicConfig(level=config.log_level)
