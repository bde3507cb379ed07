# Copyright 2026 The scaprune Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Downloads the CIFAR binary archives the pipeline reads from disk.

The pipeline itself never touches the network; run this once to populate a
local data directory:

    python3 tools/fetch_cifar.py --dataset cifar10 --out data/
"""

import argparse
import hashlib
import sys
import tarfile
import urllib.request
from pathlib import Path

ARCHIVES = {
    "cifar10": {
        "url": "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz",
        "md5": "c32a1d4ab5d03f1284b67883e8d87530",
        "subdir": "cifar-10-batches-bin",
        "files": [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"],
    },
    "cifar100": {
        "url": "https://www.cs.toronto.edu/~kriz/cifar-100-binary.tar.gz",
        "md5": "03b5dce01913d631647c71ecec9e9cb8",
        "subdir": "cifar-100-binary",
        "files": ["train.bin", "test.bin"],
    },
}


def fetch(dataset: str, out_dir: Path) -> int:
    spec = ARCHIVES[dataset]
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / spec["subdir"]
    if all((target / f).exists() for f in spec["files"]):
        print(f"{target} already complete")
        return 0

    archive = out_dir / Path(spec["url"]).name
    if not archive.exists():
        print(f"downloading {spec['url']}")
        urllib.request.urlretrieve(spec["url"], archive)

    digest = hashlib.md5(archive.read_bytes()).hexdigest()
    if digest != spec["md5"]:
        print(f"checksum mismatch for {archive}: {digest}", file=sys.stderr)
        return 1

    print(f"extracting {archive}")
    with tarfile.open(archive) as tar:
        tar.extractall(out_dir)

    missing = [f for f in spec["files"] if not (target / f).exists()]
    if missing:
        print(f"archive did not contain: {missing}", file=sys.stderr)
        return 1
    print(f"ready: {target}")
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset", choices=sorted(ARCHIVES), default="cifar10")
    parser.add_argument("--out", type=Path, default=Path("data"))
    args = parser.parse_args()
    return fetch(args.dataset, args.out)


if __name__ == "__main__":
    sys.exit(main())
