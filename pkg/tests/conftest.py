import json

import pytest


def write_json(path, obj):
    path.write_text(json.dumps(obj), encoding="utf-8")
    return path


def minimal_gt_dict():
    return {
        "images": [{"id": 1, "file_name": "img1.png", "width": 64, "height": 64}],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 1, "bbox": [4, 4, 10, 10]}
        ],
        "categories": [{"id": 1, "name": "thing"}],
    }


@pytest.fixture
def gt_file(tmp_path):
    return write_json(tmp_path / "gt.json", minimal_gt_dict())
