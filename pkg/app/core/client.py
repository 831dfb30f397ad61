"""
Dataset Client - Downloads benchmark splits (train/valid/test) over HTTP.
"""
import os
import logging
import requests
from typing import Dict, List, Optional
from ..models import config
from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)


class DatasetClient:
    """
    Client for a static dataset mirror.

    Expects `<base_url>/train.txt`, `<base_url>/valid.txt` and `<base_url>/test.txt`.
    """

    def __init__(self, base_url: Optional[str] = None, timeout: Optional[float] = None,
                 session: Optional[requests.Session] = None):
        self.base_url = (base_url or config.DATA_URL).rstrip("/")
        self.timeout = timeout if timeout is not None else config.HTTP_TIMEOUT
        self.session = session or requests.Session()

    def _get_headers(self) -> Dict[str, str]:
        return {"Accept": "text/plain"}

    def split_url(self, split: str) -> str:
        return f"{self.base_url}/{split}{config.SPLIT_SUFFIXES[0]}"

    def _download(self, url: str, save_path: str) -> str:
        """Downloads one file; the target is only written after a complete response."""
        try:
            response = self.session.get(url, headers=self._get_headers(), timeout=self.timeout)
            response.raise_for_status()
        except requests.RequestException as e:
            raise DataError(f"download failed for {url}: {e}") from e
        os.makedirs(os.path.dirname(os.path.abspath(save_path)), exist_ok=True)
        tmp_path = save_path + ".part"
        with open(tmp_path, "wb") as f:
            f.write(response.content)
        os.replace(tmp_path, save_path)
        logger.info(f"Saved {url} -> {save_path} ({len(response.content)} bytes)")
        return save_path

    def fetch(self, out_dir: str) -> List[str]:
        """Downloads every split into `out_dir` and returns the written paths."""
        if not self.base_url:
            raise ConfigError("no dataset URL given (set DEGREEMIX_DATA_URL or pass --url)")
        paths = []
        for split in config.SPLITS:
            target = os.path.join(out_dir, split + config.SPLIT_SUFFIXES[0])
            paths.append(self._download(self.split_url(split), target))
        return paths
