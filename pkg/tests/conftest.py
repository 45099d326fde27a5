import numpy as np
import pytest

from evflex.config import DistributionSpec, FleetDistributions
from evflex.fleet import Connection, FleetSnapshot


def point(value: float) -> DistributionSpec:
    """Degenerate uniform: every draw equals `value`."""
    return DistributionSpec("uniform", value, value)


def deterministic_distributions(power=6.0, eff=0.9, capacity=24.0, initial=0.5,
                                demanded=0.0, plug_in=24.0, plug_out=47.9):
    """Identical-parameter fleet, connected for (nearly) the whole day by
    default: session [0, 23.9) on the simulation clock."""
    return FleetDistributions(
        rated_power_kw=point(power),
        efficiency=point(eff),
        capacity_kwh=point(capacity),
        initial_soc=point(initial),
        demanded_soc=point(demanded),
        plug_in_hour=point(plug_in),
        plug_out_hour=point(plug_out),
    )


def make_snapshot(soc, connection, pc=6.0, pd=None, time_h=0.0,
                  in_events=None, out_events=None) -> FleetSnapshot:
    """Hand-built telemetry for aggregate/control tests."""
    soc = np.asarray(soc, dtype=float)
    connection = np.asarray(connection, dtype=np.int8)
    n = soc.size
    pc_arr = np.full(n, pc) if np.isscalar(pc) else np.asarray(pc, dtype=float)
    pd_arr = pc_arr.copy() if pd is None else (
        np.full(n, pd) if np.isscalar(pd) else np.asarray(pd, dtype=float))
    power = np.zeros(n)
    charging = (connection == Connection.CHARGING) | (connection == Connection.FORCED_CHARGING)
    power[charging] = -pc_arr[charging]
    power[connection == Connection.DISCHARGING] = pd_arr[connection == Connection.DISCHARGING]
    empty_i = np.empty(0, dtype=np.int64)
    empty_f = np.empty(0)
    empty_m = np.empty(0, dtype=np.int8)
    in_ids, in_soc, in_conn = in_events or (empty_i, empty_f, empty_m)
    out_ids, out_soc, out_conn = out_events or (empty_i, empty_f, empty_m)
    return FleetSnapshot(
        time_h=time_h,
        ids=np.arange(n, dtype=np.int64),
        soc=soc,
        connection=connection,
        power_kw=power,
        rated_charge_kw=pc_arr,
        rated_discharge_kw=pd_arr,
        in_ids=in_ids, in_soc=np.asarray(in_soc, dtype=float), in_connection=in_conn,
        out_ids=out_ids, out_soc=np.asarray(out_soc, dtype=float), out_connection=out_conn,
    )


@pytest.fixture
def table_distributions():
    return FleetDistributions()
