"""Timing-driven quadratic global placement for FPGAs with a learned net-delay model.

Public names are imported lazily so that the command-line entry point can
configure BLAS threading before numpy is loaded.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "Netlist": "netlist", "Device": "netlist", "Placement": "netlist", "NetlistError": "netlist",
    "parse_netlist": "netlist", "parse_device": "netlist", "validate": "netlist",
    "total_hpwl": "netlist",
    "compute_routing_density": "congestion", "GCellGrid": "congestion",
    "FeatureExtractor": "features", "FeatureSet": "features",
    "DelayModel": "delay_model", "ModelConfig": "delay_model", "TrainConfig": "delay_model",
    "LinearBaseline": "delay_model", "train_model": "delay_model", "evaluate": "delay_model",
    "load_model": "delay_model", "save_model": "delay_model",
    "TimingGraph": "sta", "build_timing_graph": "sta", "run_sta": "sta", "analyze": "sta",
    "PlacerConfig": "placer", "global_place": "placer",
    "BinGrid": "legalize", "make_bins": "legalize", "spread_instances": "legalize",
    "adjust_resources": "legalize",
    "SyntheticOracle": "synth", "synth_design": "synth",
    "extract_dataset": "dataset",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    try:
        module = _EXPORTS[name]
    except KeyError:
        raise AttributeError(f"module 'tdplace' has no attribute {name!r}") from None
    return getattr(import_module(f".{module}", __name__), name)
