"""Extract the Adult and California-housing tables bundled in the
pytorch-widedeep wheel into the CSV layout the `AD` and `CA` presets read.

    pip download --no-deps pytorch-widedeep==1.7.0 -d /tmp/wheel
    python3 scripts/extract_datasets.py /tmp/wheel/pytorch_widedeep-1.7.0-py3-none-any.whl data/
"""
import io
import sys
import zipfile

import pandas as pd


def main(wheel: str, out_dir: str) -> None:
    z = zipfile.ZipFile(wheel)

    def read(name: str) -> pd.DataFrame:
        raw = z.read(f"pytorch_widedeep/datasets/data/{name}.parquet.brotli")
        return pd.read_parquet(io.BytesIO(raw))

    adult = read("adult")
    adult["target"] = (adult.pop("income").str.strip() == ">50K").astype(int)
    adult.to_csv(f"{out_dir}/adult.csv", index=False)

    ca = read("california_housing")
    ca = ca.rename(columns={"MedHouseVal": "target"})
    ca.to_csv(f"{out_dir}/california_housing.csv", index=False)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
