import logging

from errors import WeightFormatError, WeightShapeError
from numerics import OrthonormalBasis
from interventions.subspace import Subspace
from refmodel.weights_io import read_artifact, write_artifact

logger = logging.getLogger(__name__)


def save_subspace(path, s, provenance=None, run_id=""):
    header = {
        "kind": "subspace",
        "d": s.d,
        "k": s.k,
        "tap_layer": s.layer,
        "tap_position": s.position,
        "provenance": provenance or s.provenance,
        "run_id": run_id,
    }
    write_artifact(path, header, {"basis": s.basis.columns})
    logger.info(f"📂 Subspace (k={s.k}, tap={s.tap}) saved to {path}")


def load_subspace(path):
    """
    :return: (Subspace, header dict)
    """
    header, sections = read_artifact(path)
    if header.get("kind") != "subspace" or "basis" not in sections:
        raise WeightFormatError(f"{path} is not a subspace file", path=str(path), kind=header.get("kind"))
    basis = sections["basis"]
    if basis.shape != (header["d"], header["k"]):
        raise WeightShapeError(f"{path}: basis shape {basis.shape} disagrees with its header",
                               path=str(path), d=header["d"], k=header["k"])
    subspace = Subspace(OrthonormalBasis(header["d"], basis), (header["tap_layer"], header["tap_position"]),
                        header["provenance"])
    logger.debug(f"📂 Subspace loaded from {path}")
    return subspace, header
