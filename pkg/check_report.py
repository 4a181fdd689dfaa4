"""
Script to inspect a run report.
Usage: python check_report.py [output_dir]
"""
import json
import sys
from pathlib import Path

from app.config import DEFAULT_OUTPUT_DIR

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else DEFAULT_OUTPUT_DIR)
report_path = out_dir / "report.json"

if not report_path.exists():
    print(f"⚠️  No report found at {report_path}. Run an experiment first:")
    print("   python run_xft.py run presets/jw-baseline.yaml")
    sys.exit(1)

report = json.loads(report_path.read_text(encoding="utf-8"))
config = report["config"]

print("=" * 60)
print("📊 Run Report")
print("=" * 60)
print(f"Version: {report['version']}   wall time: {report['wall_time']:.3f} s")
print(f"State: {config['state']['family']} (lambda={config['state']['lambda']})")
print(f"Dynamics: {config['dynamics']['mode']} / {config['dynamics']['coupling']}, seed {config['seed']}")
print(f"Marginal deviations: {report['marginals']['deviation_a']:.2e}, {report['marginals']['deviation_b']:.2e}")
print(f"Energy conservation: {report['energy_conservation']:.2e}")
print(f"TRS deviation: {report['trs_deviation']:.2e}")

print("\n" + "=" * 60)
print("🔬 Checks")
print("=" * 60)
for check in report["theorems"]:
    if check["skipped"]:
        mark = "⏭️ "
    elif check["pass"]:
        mark = "✅"
    elif check["conditional"]:
        mark = "❔"
    else:
        mark = "❌"
    print(f"  {mark} {check['name']:<40} max_violation={check['max_violation']}")
    if check["note"]:
        print(f"      {check['note']}")

occupied = [c for c in report["classes"] if float(c["prob"]) > 0]
print(f"\nTransition classes: {len(report['classes'])} ({len(occupied)} occupied)")
print(f"Overall: {'✅ PASS' if report['passed'] else '❌ FAIL'}")
