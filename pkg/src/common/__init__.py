from .json_util import read_json, to_json, to_json_array, write_json
from .settings import RuntimeSettings
