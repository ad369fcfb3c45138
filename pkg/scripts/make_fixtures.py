"""Write the reference plant files used by the CLI examples and the README."""

import argparse
from pathlib import Path

from dqstab.plant import PLL_RETUNED, VAC_RETUNED, VAC_UNSTABLE, reference_plant, save_plant


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "fixtures"))
    out = Path(ap.parse_args().out)
    out.mkdir(parents=True, exist_ok=True)
    cases = {
        "plant_unstable.json": reference_plant(VAC_UNSTABLE),
        "plant_vac_retuned.json": reference_plant(VAC_RETUNED),
        "plant_pll_retuned.json": reference_plant(VAC_UNSTABLE, PLL_RETUNED),
        "plant_measured_unit.json": reference_plant(VAC_UNSTABLE, delay=True),
    }
    for name, plant in cases.items():
        save_plant(plant, out / name)
        print(out / name)


if __name__ == "__main__":
    main()
