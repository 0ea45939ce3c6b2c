#!/usr/bin/env python3
"""Rebuild the CSV files under data/ from redistributed copies on PyPI.

    pip download --no-deps keel-ds==0.2.5 rdatasets==0.2.10 ckd==0.1.0 -d /tmp/wheels
    python3 tools/prepare_datasets.py /tmp/wheels data/

Sources:
  diabetes.csv   Pima Indians Diabetes (768 rows), KEEL copy in keel-ds.
  cirrhosis.csv  Mayo Clinic PBC trial (R survival::pbc), restricted to the
                 312 randomized patients; columns renamed to the UCI
                 "Cirrhosis Patient Survival Prediction" layout.
  ckd.csv        UCI Chronic Kidney Disease, complete cases only (158 rows).
"""
import io
import lzma
import pickle
import sys
import zipfile
from pathlib import Path

import pandas as pd


def wheel(root: Path, prefix: str) -> zipfile.ZipFile:
    return zipfile.ZipFile(next(root.glob(prefix + "*.whl")))


def diabetes(root: Path) -> pd.DataFrame:
    raw = wheel(root, "keel_ds").read("keel_ds/data/imbalanced/raw/pima.dat").decode()
    cols = ["Pregnancies", "Glucose", "BloodPressure", "SkinThickness", "Insulin",
            "BMI", "DiabetesPedigreeFunction", "Age", "Outcome"]
    df = pd.read_csv(io.StringIO(raw), header=None, names=cols)
    df["Outcome"] = (df["Outcome"].str.strip() == "positive").astype(int)
    return df


def cirrhosis(root: Path) -> pd.DataFrame:
    blob = wheel(root, "rdatasets").read("rdatasets/_data/survival/pbc.pkl.compress")
    pbc = pickle.loads(lzma.decompress(blob))
    pbc = pbc[pbc["trt"].notna()].copy()
    out = pd.DataFrame({
        "ID": pbc["id"].astype(int),
        "N_Days": pbc["time"].astype(int),
        "Status": pbc["status"].map({0: "C", 1: "CL", 2: "D"}),
        "Drug": (pbc["trt"] == 2).astype(int),
        "Age": pbc["age"].round(2),
        "Sex": pbc["sex"].str.upper(),
        "Ascites": pbc["ascites"].astype(int),
        "Hepatomegaly": pbc["hepato"].astype(int),
        "Spiders": pbc["spiders"].astype(int),
        "Edema": pbc["edema"].map(lambda v: f"{v:g}"),
        "Bilirubin": pbc["bili"],
        "Cholesterol": pbc["chol"],
        "Albumin": pbc["albumin"],
        "Copper": pbc["copper"],
        "Alk_Phos": pbc["alk.phos"],
        "SGOT": pbc["ast"],
        "Tryglicerides": pbc["trig"],
        "Platelets": pbc["platelet"],
        "Prothrombin": pbc["protime"],
        "Stage": pbc["stage"].astype(int),
    })
    return out


def ckd(root: Path) -> pd.DataFrame:
    raw = wheel(root, "ckd").read("ckd/files/data/ckd_raw.csv").decode()
    df = pd.read_csv(io.StringIO(raw), index_col=0).dropna()
    df = df.rename(columns={"wbcc": "wc", "rbcc": "rc"})
    for c in ["al", "su"]:
        df[c] = df[c].astype(int)
    return df


def main() -> None:
    root, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    diabetes(root).to_csv(out / "diabetes.csv", index=False)
    cirrhosis(root).to_csv(out / "cirrhosis.csv", index=False, na_rep="NA")
    ckd(root).to_csv(out / "ckd.csv", index=False)


if __name__ == "__main__":
    main()
