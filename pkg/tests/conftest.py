import numpy as np
import pytest

from featuregate.table import ColumnSpec, Schema, load_table


def _fmt(v) -> str:
    return "" if v is None else (repr(float(v)) if isinstance(v, float) else str(v))


@pytest.fixture(scope="session")
def house_schema():
    return Schema(
        (
            ColumnSpec("YearSold", "continuous"),
            ColumnSpec("LotArea", "continuous"),
            ColumnSpec("YearBuilt", "continuous"),
            ColumnSpec("GarageYrBlt", "continuous"),
            ColumnSpec("GarageCars", "continuous"),
            ColumnSpec("GarageArea", "continuous"),
            ColumnSpec("SalePrice", "continuous"),
        ),
        target="SalePrice",
        target_kind="continuous",
    )


@pytest.fixture(scope="session")
def house_csv(house_schema):
    """Synthetic house-price rows: LotArea right-skewed with missing cells."""
    rng = np.random.default_rng(1234)
    n = 240
    year_sold = rng.integers(2006, 2011, n)
    lot = np.exp(rng.normal(9.1, 0.6, n)).round(1)  # heavy right skew
    lot_missing = rng.random(n) < 0.1
    year_built = rng.integers(1900, 2011, n)
    garage_missing = rng.random(n) < 0.08
    garage_yr = np.maximum(year_built, year_built + rng.integers(0, 30, n))
    cars = rng.integers(0, 4, n)
    area = np.where(cars > 0, cars * 230 + rng.normal(0, 40, n).round(1), 0.0)
    price = (
        40000 * np.log1p(np.where(lot_missing, 8000, lot))
        + 1500 * (year_built - 1900)
        + 15000 * cars
        + rng.normal(0, 10000, n).round(0)
    )
    lines = ["YearSold,LotArea,YearBuilt,GarageYrBlt,GarageCars,GarageArea,SalePrice"]
    for i in range(n):
        lines.append(
            ",".join(
                [
                    str(year_sold[i]),
                    "" if lot_missing[i] else repr(float(lot[i])),
                    str(year_built[i]),
                    "" if garage_missing[i] else str(garage_yr[i]),
                    str(cars[i]),
                    repr(float(area[i])),
                    repr(float(price[i])),
                ]
            )
        )
    return "\n".join(lines) + "\n"


@pytest.fixture(scope="session")
def house_table(house_csv, house_schema):
    return load_table(house_csv.encode(), house_schema)


@pytest.fixture(scope="session")
def census_schema():
    return Schema(
        (
            ColumnSpec("JWAP", "continuous"),
            ColumnSpec("SEX", "categorical"),
            ColumnSpec("SCHL", "ordinal"),
            ColumnSpec("INCOME", "categorical", allow_missing=False),
        ),
        target="INCOME",
        target_kind="categorical",
    )


@pytest.fixture(scope="session")
def census_csv():
    """Small income-survey-shaped fixture; JWAP has missing cells."""
    rng = np.random.default_rng(99)
    n = 400
    jwap = rng.integers(60, 600, n).astype(float)
    jwap_missing = rng.random(n) < 0.15
    sex = rng.choice(["male", "female"], n)
    schl = rng.choice(["hs", "ba", "ma", "phd"], n, p=[0.4, 0.35, 0.18, 0.07])
    score = (
        (jwap > 285).astype(float)
        + (schl == "ma")
        + 2 * (schl == "phd")
        + rng.normal(0, 0.8, n)
    )
    income = np.where(score > 1.0, "high", "low")
    lines = ["JWAP,SEX,SCHL,INCOME"]
    for i in range(n):
        lines.append(
            ",".join(
                [
                    "" if jwap_missing[i] else repr(float(jwap[i])),
                    sex[i],
                    schl[i],
                    income[i],
                ]
            )
        )
    return "\n".join(lines) + "\n"


@pytest.fixture(scope="session")
def census_table(census_csv, census_schema):
    return load_table(census_csv.encode(), census_schema)


@pytest.fixture(scope="session")
def acs_like_table():
    """Schema-shaped stand-in for the big survey table: 494 entity variables,
    30085 rows, binary target."""
    n, m = 30085, 494
    rng = np.random.default_rng(7)
    codes = rng.integers(0, 10, size=(n, m + 1), dtype=np.uint8)
    codes[:, -1] = rng.integers(0, 2, size=n, dtype=np.uint8)
    buf = np.empty((n, 2 * (m + 1)), dtype=np.uint8)
    buf[:, 0::2] = codes + ord("0")
    buf[:, 1::2] = ord(",")
    buf[:, -1] = ord("\n")
    names = [f"V{i:03d}" for i in range(m)] + ["TARGET"]
    csv_text = ",".join(names) + "\n" + buf.tobytes().decode("ascii")
    schema = Schema(
        tuple(ColumnSpec(v, "categorical") for v in names),
        target="TARGET",
        target_kind="categorical",
    )
    return load_table(csv_text.encode(), schema)
