"""Recipes for the benchmark datasets: converters from their published raw
formats to a mixgp CSV plus schema file.

    cleveland     processed.cleveland.data (UCI heart disease, '?' missing)
    abalone       abalone.data (UCI abalone)
    oilflow       DataTrn.txt + DataTrnLbls.txt (12 real values, one-hot flow class)
    alphadigits   binaryalphadigs.mat (36 classes x 39 images of 20 x 16 pixels)

The raw files are not shipped; datasets/README.md says where they live.
Every converted cell goes through the same parser as load_csv before
anything is written.
"""
import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.io import loadmat

from .data import MISSING_TOKENS, parse_frame, parse_schema
from .errors import InvalidConfig, ParseError, SchemaMismatch

logger = logging.getLogger(__name__)

CLEVELAND_SCHEMA = """\
age:gaussian
sex:bernoulli
cp:categorical:4:levels=1|2|3|4
trestbps:gaussian
chol:gaussian
fbs:bernoulli
restecg:categorical:3:levels=0|1|2
thalach:gaussian
exang:bernoulli
oldpeak:gaussian
slope:categorical:3:levels=1|2|3
ca:categorical:4:levels=0|1|2|3
thal:categorical:3:levels=3|6|7
num:label
"""

ABALONE_SCHEMA = """\
sex:categorical:3:levels=M|F|I
length:gaussian
diameter:gaussian
height:gaussian
whole_weight:gaussian
shucked_weight:gaussian
viscera_weight:gaussian
shell_weight:gaussian
rings:label
"""

OILFLOW_SCHEMA = ''.join(f"x{k}:gaussian\n" for k in range(1, 13)) + "flow:label\n"

# images are block-averaged down to this size, then thresholded at 1/2
ALPHADIGITS_SHAPE = (10, 8)

ALPHADIGITS_SCHEMA = ''.join(f"px{r}_{c}:bernoulli\n" for r in range(ALPHADIGITS_SHAPE[0])
                             for c in range(ALPHADIGITS_SHAPE[1])) + "symbol:label\n"


def _columns(schema_text):
    return [line.split(':')[0] for line in schema_text.splitlines() if line]


def _read_table(path, n_fields, sep=','):
    frame = pd.read_csv(path, header=None, sep=sep, dtype=str, keep_default_na=False)
    if frame.shape[1] != n_fields:
        raise ParseError(f"read - {path}: expected {n_fields} fields per row, got {frame.shape[1]}")
    return frame.apply(lambda col: col.str.strip())


def read_cleveland(path, drop_incomplete=True):
    """processed.cleveland.data as a frame; rows with a '?' are dropped unless drop_incomplete is False"""
    frame = _read_table(path, 14)
    frame.columns = _columns(CLEVELAND_SCHEMA)
    if drop_incomplete:
        incomplete = frame.isin(MISSING_TOKENS).any(axis=1)
        logger.info("read_cleveland(): dropping %d incomplete rows", int(incomplete.sum()))
        frame = frame[~incomplete].reset_index(drop=True)
    return frame


def read_abalone(path):
    frame = _read_table(path, 9)
    frame.columns = _columns(ABALONE_SCHEMA)
    return frame


def read_oilflow(data_path, labels_path):
    """DataTrn.txt values with the flow class (0, 1, 2) taken from the one-hot DataTrnLbls.txt"""
    frame = _read_table(data_path, 12, sep=r'\s+')
    frame.columns = _columns(OILFLOW_SCHEMA)[:-1]
    try:
        onehot = _read_table(labels_path, 3, sep=r'\s+').astype(float).to_numpy()
    except ValueError as e:
        raise ParseError(f"read_oilflow() - {labels_path}: {e}")
    if onehot.shape[0] != len(frame):
        raise SchemaMismatch(f"read_oilflow() - {len(frame)} data rows but {onehot.shape[0]} label rows")
    if not np.all(np.sort(onehot, axis=1) == [0.0, 0.0, 1.0]):
        raise ParseError(f"read_oilflow() - {labels_path} is not one-hot")
    frame['flow'] = onehot.argmax(axis=1).astype(str)
    return frame


def downsample_image(image, shape=ALPHADIGITS_SHAPE):
    """block means of a binary image, thresholded at 1/2 (a tie counts as on)"""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    bh, bw = h // shape[0], w // shape[1]
    if bh * shape[0] != h or bw * shape[1] != w:
        raise SchemaMismatch(f"downsample_image() - {image.shape} does not tile into {shape}")
    blocks = image.reshape(shape[0], bh, shape[1], bw).mean(axis=(1, 3))
    return (blocks >= 0.5).astype(int)


def read_alphadigits(path):
    """binaryalphadigs.mat, class by class, each image downsampled and flattened"""
    blob = loadmat(path)
    if 'dat' not in blob:
        raise ParseError(f"read_alphadigits() - {path} has no 'dat' array")
    images = blob['dat']
    if 'classlabels' in blob:
        names = [str(np.ravel(c)[0]) for c in np.ravel(blob['classlabels'])]
    else:
        names = [str(c) for c in range(images.shape[0])]
    rows, labels = [], []
    for c in range(images.shape[0]):
        for i in range(images.shape[1]):
            rows.append(downsample_image(images[c, i]).ravel())
            labels.append(names[c])
    columns = _columns(ALPHADIGITS_SCHEMA)
    frame = pd.DataFrame(np.array(rows).astype(str), columns=columns[:-1])
    frame[columns[-1]] = labels
    return frame


@dataclass(frozen=True)
class Recipe:
    name: str
    schema: str
    raw_files: tuple
    reader: object
    about: str


RECIPES = {r.name: r for r in (
    Recipe('cleveland', CLEVELAND_SCHEMA, ('processed.cleveland.data',), read_cleveland,
           "UCI heart disease (Cleveland), complete rows, num 0-4 as label"),
    Recipe('abalone', ABALONE_SCHEMA, ('abalone.data',), read_abalone,
           "UCI abalone, rings as label"),
    Recipe('oilflow', OILFLOW_SCHEMA, ('DataTrn.txt', 'DataTrnLbls.txt'), read_oilflow,
           "multi-phase oil flow, 12 gaussian columns, flow class as label"),
    Recipe('alphadigits', ALPHADIGITS_SCHEMA, ('binaryalphadigs.mat',), read_alphadigits,
           "binary alphadigits at 10 x 8, 80 bernoulli columns, symbol as label"),
)}


def get_recipe(name):
    try:
        return RECIPES[name]
    except KeyError:
        raise InvalidConfig(f"get_recipe() - unknown dataset '{name}', expected one of {sorted(RECIPES)}")


def find_raw(name, directory):
    """paths of a recipe's raw files inside directory"""
    recipe = get_recipe(name)
    paths = [os.path.join(directory, f) for f in recipe.raw_files]
    absent = [p for p in paths if not os.path.exists(p)]
    if absent:
        raise FileNotFoundError(f"find_raw() - {name} needs {', '.join(absent)}")
    return paths


def select_rows(frame, label, classes=None, sample=None, seed=0):
    """keep the first `classes` label classes (file order), then `sample` random rows (file order kept)"""
    if classes is not None:
        kept = list(dict.fromkeys(frame[label]))[:classes]
        frame = frame[frame[label].isin(kept)]
    if sample is not None:
        if not 1 <= sample <= len(frame):
            raise InvalidConfig(f"select_rows() - cannot sample {sample} of {len(frame)} rows")
        rows = np.sort(np.random.default_rng(seed).choice(len(frame), size=sample, replace=False))
        frame = frame.iloc[rows]
    return frame.reset_index(drop=True)


def load_raw(name, raw_paths, classes=None, sample=None, seed=0):
    """load_raw(name, raw_paths) - (schema, ObservationMatrix, frame) of a dataset's raw files

    The frame holds the converted cells as strings, in schema column order.
    """
    recipe = get_recipe(name)
    if len(raw_paths) != len(recipe.raw_files):
        raise InvalidConfig(f"load_raw() - {name} reads {', '.join(recipe.raw_files)}")
    schema = parse_schema(recipe.schema)
    frame = recipe.reader(*raw_paths)
    frame = select_rows(frame, schema.label, classes, sample, seed)
    obs = parse_frame(frame, schema, source=name)
    return schema, obs, frame


def write_dataset(directory, name, schema, frame, header=None):
    """<name>.csv and <name>.schema in directory; returns both paths"""
    csv_path = os.path.join(directory, f"{name}.csv")
    schema_path = os.path.join(directory, f"{name}.schema")
    with open(csv_path, 'w', newline='') as fp:
        if header:
            fp.write(header)
        frame.to_csv(fp, index=False)
    with open(schema_path, 'w') as fp:
        if header:
            fp.write(header)
        fp.write(schema.to_text())
    return csv_path, schema_path
