from pathlib import Path
from typing import Optional

from dualdp import storage
from dualdp.app_log_config import logger
from dualdp.models.problem_model import StationaryInstance, load_instance
from dualdp.schemas.results import OracleReport, RunResult, VerifyReport
from dualdp.schemas.schemas import EdParams, ReservoirParams, RunConfig
from dualdp.services import benchmarks
from dualdp.services.ddp_engine import run_eddp, run_eddp_fast, run_eddp_lu, run_sddp
from dualdp.services.exceptions import ConfigError, MaxIters
from dualdp.services.hddp import HierarchicalInstance, extensive_form, run_hddp


VERIFY_TOL = 1e-8


class InstanceRepository:
    """
    Handles reading and writing instance files, plain or hierarchical.
    """
    def load(self, path) -> StationaryInstance | HierarchicalInstance:
        if storage.is_hierarchical(path):
            hinst = storage.read_hierarchical(path)
            logger.info(f"Loaded hierarchical instance '{hinst.top.name}' from {path} "
                        f"(n={hinst.top.n}, N1={hinst.N1}, N2={hinst.N2})")
            return hinst
        return load_instance(path)

    def load_flat(self, path) -> StationaryInstance:
        """Hierarchical files come back as their extensive form."""
        loaded = self.load(path)
        if isinstance(loaded, HierarchicalInstance):
            return extensive_form(loaded)
        return loaded

    def save(self, instance, path) -> None:
        if isinstance(instance, HierarchicalInstance):
            storage.write_hierarchical(instance, path)
        else:
            storage.write_instance(instance, path)


class SolverService:
    """
    Runs one algorithm on an instance file and writes its outputs.
    """
    runners = {
        "eddp": run_eddp,
        "eddp_fast": run_eddp_fast,
        "eddp_lu": run_eddp_lu,
        "sddp": run_sddp,
    }

    def __init__(self, repo: InstanceRepository):
        self.repo = repo

    def solve(self, cfg: RunConfig, instance_path, out: Optional[str] = None,
              dump_dir: Optional[str] = None) -> RunResult:
        loaded = self.repo.load(instance_path)
        hierarchical = cfg.algo == "hddp"
        if hierarchical and not isinstance(loaded, HierarchicalInstance):
            raise ConfigError("algo hddp needs a hierarchical instance file")
        if not hierarchical and isinstance(loaded, HierarchicalInstance):
            logger.info("Solving the extensive form of the hierarchical instance")
            loaded = extensive_form(loaded)

        try:
            result = run_hddp(loaded, cfg) if hierarchical else self.runners[cfg.algo](loaded, cfg)
        except MaxIters as exc:
            if exc.result is not None:
                self._write(exc.result, out, dump_dir, hierarchical)
            raise
        self._write(result, out, dump_dir, hierarchical)
        return result

    def _write(self, result: RunResult, out, dump_dir, hierarchical: bool) -> None:
        if out:
            storage.write_trace(result.records, out, hierarchical=hierarchical)
        if dump_dir:
            storage.write_dumps(result, dump_dir)


class OracleService:
    """
    Extensive-form reference values and trace verification.
    """
    def __init__(self, repo: InstanceRepository):
        self.repo = repo

    def value(self, instance_path, horizon: int, emit: Optional[str] = None) -> OracleReport:
        inst = self.repo.load_flat(instance_path)
        return benchmarks.oracle_value(inst, horizon, emit=emit)

    def verify(self, instance_path, trace_path, horizon: int) -> VerifyReport:
        frame = storage.read_trace(trace_path)
        if frame.empty:
            raise ConfigError(f"trace {trace_path} has no rows")
        last = frame.iloc[-1]
        lb_final = float(last["lb_root"])
        if "eps0" not in frame.columns or frame["eps0"].isna().iloc[-1]:
            raise ConfigError(f"trace {trace_path} does not record the a-priori bound eps0")
        eps0 = float(last["eps0"])

        report = self.value(instance_path, horizon)
        gap = report.value - lb_final
        reasons = []
        if lb_final > report.value + report.error_bound + VERIFY_TOL:
            reasons.append(f"lower bound {lb_final:.10g} exceeds oracle value plus bound "
                           f"{report.value + report.error_bound:.10g}")
        if gap > eps0 + report.error_bound + VERIFY_TOL:
            reasons.append(f"gap {gap:.6g} exceeds eps0 {eps0:.6g} plus oracle bound {report.error_bound:.3g}")
        return VerifyReport(passed=not reasons, lb_final=lb_final, oracle_value=report.value,
                            error_bound=report.error_bound, eps0=eps0, gap=gap, reasons=reasons)


class GeneratorService:
    """
    Builds benchmark instances and writes them to disk.
    """
    def __init__(self, repo: InstanceRepository):
        self.repo = repo

    def generate(self, kind: str, out, seed: int = 0, params: Optional[dict] = None,
                 emit_extensive: Optional[str] = None, oracle_horizon: int = 5):
        params = params or {}
        if kind == "chain":
            instance = benchmarks.gen_chain(**params)
        elif kind == "reservoir":
            instance = benchmarks.gen_reservoir(ReservoirParams(**params), seed)
        elif kind == "ed":
            instance = benchmarks.gen_ed(EdParams(**params), seed)
            prices = benchmarks.marginal_prices(instance, 0, instance.top.x0)
            logger.info(f"Root marginal prices at x0: {[round(float(p), 4) for p in prices]}")
        else:
            raise ConfigError(f"unknown instance kind '{kind}'")
        self.repo.save(instance, out)

        if emit_extensive:
            if isinstance(instance, HierarchicalInstance):
                storage.write_instance(extensive_form(instance), emit_extensive)
            else:
                benchmarks.oracle_value(instance, oracle_horizon, emit=emit_extensive)
            logger.info(f"Wrote extensive form of '{Path(out).name}' to {emit_extensive}")
        return instance
