from indexprobe import IndexSpec, IndexTerm, SpatialFrame


def frame_of(columns, scale="nta", ids=None, population=None):
    n = len(next(iter(columns.values())))
    ids = ids or [f"u{i:03d}" for i in range(n)]
    return SpatialFrame(scale, tuple(ids), {k: [float("nan") if v is None else v for v in col]
                                            for k, col in columns.items()}, population)


def additive(name, *terms, mode="population"):
    """additive("orig", "+temp", "-green") -> IndexSpec."""
    return IndexSpec(name, "additive-z", tuple(IndexTerm(t[1:], 1 if t[0] == "+" else -1) for t in terms),
                     zscore_mode=mode)


ORIGINAL = ("+temp", "+black", "-green", "-ac", "-income")
