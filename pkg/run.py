# run.py
"""
Точка входа: конвейер SSM-управления колебаниями.

    python run.py chain-demo                        # модель и конфиг цепочки из 10 масс
    python run.py eig     --config configs/chain.json
    python run.py ssm     --config configs/chain.json
    python run.py select  --config configs/chain.json [--metric mhsv] [--threshold 0.95]
    python run.py control --config configs/chain.json [--boundaries 20] [--no-validate] [--fresh]
    python run.py validate --config configs/chain.json

Коды выхода: 0 успех, 2 ошибка конфигурации или модели, 3 численный сбой,
4 не выполнен критерий приёмки.
"""

import argparse
import logging
import os
import sys
import time
from typing import List, Optional

import analyze
from engine import ControlEngine
from ssmc import config
from ssmc.config import RunConfig
from ssmc.errors import ConfigError, InvariantError, ModelError, NumericalError
from ssmc.mechmodel import build_oscillator_chain, chain_default_forcing, save_model
from ssmc.ssm import residual_slope

log = logging.getLogger("run")

CHAIN_MODEL = os.path.join("models", "chain10.json")
CHAIN_CONFIG = os.path.join("configs", "chain.json")


def _line():
    print(f"\n{'=' * 55}")


# ───────────────────────────────────────────────
# Команды
# ───────────────────────────────────────────────

def cmd_eig(engine: ControlEngine, args) -> int:
    pairs = engine.spectrum()
    _line()
    for i in engine.cfg.master_pairs:
        lam = pairs[i - 1].lam
        print(f"  λ_{i} = {lam.real:.4f} ± {abs(lam.imag):.4f}i")
    print(f"  Пар вычислено:  {len(pairs)}")
    print(f"  Время:          {engine.timings['eig']:.3f}s")
    print(f"{'=' * 55}\n")
    return 0


def cmd_ssm(engine: ControlEngine, args) -> int:
    ssm, res = engine.compute_ssm()
    _line()
    print(f"  Порядок SSM:        {ssm.order}")
    print(f"  Резонансных членов: {len(ssm.resonances) - ssm.master.dim}")
    if not ssm.is_linear():
        slope = residual_slope(list(res.itertuples(index=False, name=None)))
        print(f"  Наклон невязки:     {slope:.3f} (не меньше {ssm.order + 1})")
    else:
        print("  Модель линейна: все нелинейные коэффициенты нулевые")
    print(f"  Время:              {engine.timings['ssm']:.2f}s")
    print(f"{'=' * 55}\n")
    return 0


def cmd_select(engine: ControlEngine, args) -> int:
    rankings, chosen = engine.rank(args.metric, args.threshold)
    first = [r for r in rankings[:5]]
    _line()
    print(f"  Выбранные пары:        {chosen}")
    print(f"  DCgain (первые 5):     {sum(r.normalized_dcgain for r in first):.3f}")
    print(f"  MHSV   (первые 5):     {sum(r.normalized_mhsv for r in first):.3f}")
    print(f"  Время:                 {engine.timings['select']:.3f}s")
    print(f"{'=' * 55}\n")
    return 0


def cmd_control(engine: ControlEngine, args) -> int:
    validate = False if args.no_validate else None
    sol, reference = engine.control(validate=validate)
    m = sol.metrics
    _line()
    print(f"  Сегменты:            {sol.segment_boundaries}")
    print(f"  Целевая функция J:   {m['objective_value']:.6g}")
    print(f"  Пик (управляемый):   {m.get('peak_controlled_amplitude', float('nan')):.4g}")
    if reference is not None:
        print(f"  Пик (без управления): {reference.metrics['peak_amplitude']:.4g}")
    if "rms_prediction_error" in m:
        print(f"  RMS(z_full − z_pred): {m['rms_prediction_error']:.4g}")
    print(f"  Поправка εV̂q / W(p): {m['correction_ratio']:.3g}")
    print(f"  Время:               {engine.timings['control']:.1f}s")
    print(f"{'=' * 55}\n")

    summary = analyze.report(engine.out_dir, metrics=m)
    for k, ok in summary["checks"].items():
        print(f"  [CHECK] {k}: {'OK' if ok else 'FAIL'}")
    return 0


def cmd_validate(engine: ControlEngine, args) -> int:
    t0 = time.time()
    run, rms = engine.replay()
    _line()
    print(f"  Повтор u.csv на полной модели: {run.times.size} узлов")
    print(f"  RMS(z_full − z_pred):          {rms:.4g}")
    print(f"  Пик амплитуды:                 {run.metrics['peak_amplitude']:.4g}")
    print(f"  Время:                         {time.time() - t0:.1f}s")
    print(f"{'=' * 55}\n")
    return 0


def cmd_chain_demo(args) -> int:
    """Модель цепочки из 10 масс и конфиг прогона (m=k=1, c=0.1, κ=0.5, ε=0.001)."""
    actuators = [1, 5]
    sys_ = build_oscillator_chain(
        10, 1.0, 1.0, 0.1, 0.5, actuators,
        forcing=chain_default_forcing(10, actuators), epsilon=0.001,
    )
    os.makedirs(os.path.dirname(CHAIN_MODEL), exist_ok=True)
    os.makedirs(os.path.dirname(CHAIN_CONFIG), exist_ok=True)
    save_model(sys_, CHAIN_MODEL)

    cfg = RunConfig.from_dict({
        "model_path": os.path.relpath(CHAIN_MODEL, os.path.dirname(CHAIN_CONFIG)),
        "master_pairs": [1],
        "ssm_order": 3,
        "selection": {"metric": "mhsv", "threshold": 0.95, "m_hat": 10},
        "weights": {
            "Q": {"displacement_scale": 1e5, "velocity_scale": 0.0},
            "R": [0.05, 0.05],
        },
        "epsilon": 0.001,
        "horizon": {"t0": 0.0, "t1": 100.0, "boundaries": [20.0]},
        "initial": {"p0": [2.5]},
    })
    cfg.dump(CHAIN_CONFIG)

    print(f"[OK] модель:  {CHAIN_MODEL}")
    print(f"[OK] конфиг:  {CHAIN_CONFIG}")
    print(f"Дальше: python run.py control --config {CHAIN_CONFIG} --fresh")
    return 0


COMMANDS = {
    "eig": cmd_eig,
    "ssm": cmd_ssm,
    "select": cmd_select,
    "control": cmd_control,
    "validate": cmd_validate,
}


# ───────────────────────────────────────────────
# CLI
# ───────────────────────────────────────────────

def _boundaries(raw: str) -> List[float]:
    try:
        return [float(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad boundary list: {raw!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="SSM-based vibration control pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["chain-demo"]:
        p = sub.add_parser(name)
        p.add_argument("--config", default=CHAIN_CONFIG)
        p.add_argument("--out", default=config.OUT_DIR)
        p.add_argument("--fresh", action="store_true", help="recompute SSM and selection")
        p.add_argument("--metric", choices=["dcgain", "mhsv"], default=None)
        p.add_argument("--threshold", type=float, default=None)
        p.add_argument("--boundaries", type=_boundaries, default=None, help="t1,t2,...")
        p.add_argument("--no-validate", action="store_true")
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    sel = cfg.selection
    if args.metric:
        sel = sel.model_copy(update={"metric": args.metric})
    if args.threshold is not None:
        if not 0.0 <= args.threshold <= 1.0:
            raise ConfigError("--threshold must lie in [0, 1]")
        sel = sel.model_copy(update={"threshold": args.threshold})
    if args.boundaries is not None:
        # через from_dict, чтобы сработал валидатор горизонта
        raw = cfg.model_dump()
        raw["horizon"]["boundaries"] = args.boundaries
        raw["selection"] = sel.model_dump()
        return RunConfig.from_dict(raw)
    return cfg.model_copy(update={"selection": sel})


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=config.LOG_LEVEL, format="%(asctime)s | %(levelname)s | %(message)s")

    try:
        if args.command == "chain-demo":
            return cmd_chain_demo(args)
        cfg = _apply_overrides(RunConfig.load(args.config), args)
        engine = ControlEngine(cfg, args.out, fresh=args.fresh)
        return COMMANDS[args.command](engine, args)
    except (ConfigError, ModelError) as e:
        print(f"[ERROR] {e}")
        return 2
    except NumericalError as e:
        print(f"[NUMERIC] {e}")
        return 3
    except InvariantError as e:
        print(f"[FAIL] {e}")
        return 4
    except ValueError as e:
        print(f"[ERROR] {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
