#!/usr/bin/env python3
"""
Run tests and write test_results/test_summary.md with results grouped by module.
"""
import subprocess
import sys
import xml.etree.ElementTree as ET
import re
from collections import defaultdict
from datetime import datetime
from pathlib import Path


RESULTS_DIR = Path("test_results")
XML_PATH = RESULTS_DIR / "test_results.xml"
SUMMARY_PATH = RESULTS_DIR / "test_summary.md"

# Module number (first digit group of a test id) -> heading
MODULES = {
    "1": "Core Model",
    "2": "Measurement Operators",
    "3": "Patch Operators",
    "4": "Dictionary and Sparse Coding",
    "5": "Inner ADMM",
    "6": "Outer Solvers",
    "7": "Metrics",
    "8": "Image I/O",
    "9": "Sweep State and Manifest",
    "10": "Experiment Configuration",
    "11": "Integration",
    "12": "Acceptance",
}


def run_tests(extra_args=None):
    """Run pytest and generate XML report."""
    print("Running tests...")
    RESULTS_DIR.mkdir(exist_ok=True)
    result = subprocess.run(
        [sys.executable, "-m", "pytest", "tests/", "-v", f"--junitxml={XML_PATH}", "--tb=short"] + list(extra_args or []),
        capture_output=True,
        text=True
    )
    print(result.stdout)
    if result.stderr:
        print(result.stderr)
    return result.returncode == 0


def parse_test_results():
    """
    Parse JUnit XML.

    Returns:
        {test id: (status, test name, message)}; status is passed, failed or skipped
    """
    if not XML_PATH.exists():
        print("No test results XML found")
        return {}

    root = ET.parse(XML_PATH).getroot()
    results = {}
    for testcase in root.findall(".//testcase"):
        test_name = testcase.get("name", "")
        status, message = "passed", ""
        for tag, label in (("failure", "failed"), ("error", "failed"), ("skipped", "skipped")):
            node = testcase.find(tag)
            if node is not None:
                status = label
                message = (node.get("message") or "").split("\n", 1)[0]
                break

        test_id = extract_test_id(test_name)
        if test_id:
            # Parametrized cases share an id; any failure marks the id failed
            previous = results.get(test_id)
            if previous is None or previous[0] != "failed":
                results[test_id] = (status, test_name, message)
    return results


def extract_test_id(test_name):
    """Extract test ID from test name like 'test_10_3_...' -> '10.3'."""
    match = re.search(r'test_(\d+)_(\d+)', test_name)
    if match:
        return f"{match.group(1)}.{match.group(2)}"
    return None


def write_summary(results):
    """Write the markdown summary grouped by module."""
    by_module = defaultdict(list)
    for test_id, entry in results.items():
        by_module[test_id.split(".")[0]].append((test_id, *entry))

    total = len(results)
    passed = sum(1 for s, _, _ in results.values() if s == "passed")
    failed = sum(1 for s, _, _ in results.values() if s == "failed")
    skipped = total - passed - failed
    rate = 100.0 * passed / (passed + failed) if passed + failed else 0.0

    lines = [
        "# Test Execution Summary",
        "",
        f"**Date:** {datetime.now().strftime('%Y-%m-%d %H:%M')}  ",
        f"**Total Tests:** {total}  ",
        f"**Passed:** {passed}  ",
        f"**Failed:** {failed}  ",
        f"**Skipped:** {skipped}  ",
        f"**Success Rate:** {rate:.1f}%",
        "",
        "## Test Results by Module",
        "",
    ]
    for module in sorted(by_module, key=int):
        entries = sorted(by_module[module], key=lambda e: int(e[0].split(".")[1]))
        module_failed = [e for e in entries if e[1] == "failed"]
        module_skipped = [e for e in entries if e[1] == "skipped"]
        if module_failed:
            status = "❌ Failures"
        elif module_skipped and len(module_skipped) == len(entries):
            status = "⏭️ Skipped"
        else:
            status = "✅ All tests passing"
        lines += [
            f"### {MODULES.get(module, f'Module {module}')}",
            f"- **Total:** {len(entries)} tests",
            f"- **Passed:** {sum(1 for e in entries if e[1] == 'passed')}",
            f"- **Failed:** {len(module_failed)}",
            f"- **Skipped:** {len(module_skipped)}",
            f"- **Status:** {status}",
            "",
        ]
        if module_failed:
            lines.append("**Failed Tests:**")
            lines += [f"- `{name}` - {message}" for _, _, name, message in module_failed]
            lines.append("")

    SUMMARY_PATH.write_text("\n".join(lines), encoding="utf-8")
    print(f"📝 Summary written to {SUMMARY_PATH}")
    return passed, failed, skipped


def main():
    """Main function."""
    print("=" * 60)
    print("Running Tests and Updating Summary")
    print("=" * 60)

    success = run_tests(sys.argv[1:])

    results = parse_test_results()
    print(f"\nParsed {len(results)} test results")

    if results:
        passed, failed, skipped = write_summary(results)
        print("\n✅ Summary updated successfully!")
    else:
        passed = failed = skipped = 0
        print("\n⚠️  No test results to summarize")

    print(f"\nSummary: {passed} passed, {failed} failed, {skipped} skipped")
    print("=" * 60)

    return 0 if success else 1


if __name__ == "__main__":
    sys.exit(main())
