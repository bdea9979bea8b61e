from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from common.errors import DataPreparationError
from common.run_logging import get_logger
from data_load.meteo_loader import ManifestEntry
from data_load.samples import METEO_VARIABLES, SampleSet
from patch_tools.boxes import crop_patch
from patch_tools.image_io import read_image, resize_patch

logger = get_logger("misme.pairing")


@dataclass(frozen=True)
class PairingResult:
    samples: SampleSet
    n_entries: int
    n_unpaired: int
    n_boxes_skipped: int


def meteo_lookup(meteo: pd.DataFrame) -> dict[tuple[str, pd.Timestamp], int]:
    keys = list(zip(meteo["station_id"].astype(str), pd.to_datetime(meteo["timestamp"])))
    lookup: dict[tuple[str, pd.Timestamp], int] = {}
    for i, key in enumerate(keys):
        if key in lookup:
            logger.warning("Duplicate meteo row for %s at %s; keeping the first", *key)
            continue
        lookup[key] = i
    return lookup


def pair_manifest_with_meteo(
    entries: Sequence[ManifestEntry],
    meteo: pd.DataFrame,
    min_confidence: float = 0.5,
    patch_size: int = 64,
) -> PairingResult:
    """Crop every confident box and attach the meteo row with the same station and timestamp.

    Images without a meteo row are counted as unpaired and skipped. The
    manifest's vwc is the target.
    """
    lookup = meteo_lookup(meteo)
    values = meteo[list(METEO_VARIABLES)].to_numpy(dtype=np.float64)

    patches, features, targets, stations, stamps, ids = [], [], [], [], [], []
    sources, boxes = [], []
    n_unpaired = n_skipped = 0
    for i, entry in enumerate(entries):
        key = (entry.station_id, pd.Timestamp(entry.timestamp))
        row = lookup.get(key)
        if row is None:
            n_unpaired += 1
            continue
        image = read_image(entry.image)
        for k, box in enumerate(entry.boxes):
            patch = crop_patch(image, box, min_confidence)
            if patch is None:
                n_skipped += 1
                continue
            patches.append(resize_patch(patch, patch_size))
            features.append(values[row])
            targets.append(entry.vwc)
            stations.append(entry.station_id)
            stamps.append(key[1].isoformat())
            # manifest position keeps ids unique when image stems repeat across folders
            ids.append(f"{Path(entry.image).stem}_{i:04d}_{k}")
            sources.append(str(entry.image))
            boxes.append((*box.as_tuple(), box.confidence))

    if n_unpaired:
        logger.warning("%d of %d manifest images have no meteo row and were skipped", n_unpaired, len(entries))
    logger.info("Cropped %d patches; %d boxes below confidence %.2f", len(patches), n_skipped, min_confidence)
    if not patches:
        raise DataPreparationError(
            f"No samples survived pairing ({n_unpaired} unpaired images, {n_skipped} low-confidence boxes)"
        )
    box_array = np.asarray(boxes, dtype=np.float64)
    samples = SampleSet(
        patches=np.stack(patches),
        features=np.stack(features),
        feature_names=METEO_VARIABLES,
        targets=np.asarray(targets),
        station_ids=np.asarray(stations, dtype=object),
        timestamps=np.asarray(stamps, dtype=object),
        sample_ids=np.asarray(ids, dtype=object),
        extras={
            "source_image": np.asarray(sources, dtype=object),
            "x_min": box_array[:, 0], "y_min": box_array[:, 1],
            "x_max": box_array[:, 2], "y_max": box_array[:, 3],
            "confidence": box_array[:, 4],
        },
    )
    return PairingResult(samples, len(entries), n_unpaired, n_skipped)
