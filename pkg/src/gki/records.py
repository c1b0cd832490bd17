"""Patient record schema, JSON-lines parsing, labeling, and synthesis.

Records arrive as one JSON object per line:
{patient_id, history: [{hadm_id, admittime, dischtime, deathtime, gender,
age, hospital_expire_flag, icd_codes, days, drugs}]} with ISO-8601 dates.
Visits are kept sorted by admittime. The synthesizer produces a
desk-scale cohort with a plantable risk motif so downstream labels are
learnable from graph structure alone.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta
from typing import Iterable, Iterator

from .errors import DataError
from .rng import substream

__all__ = [
    "Visit",
    "PatientRecord",
    "CohortSpec",
    "parse_records",
    "assign_label",
    "disease_tag_for",
    "synthesize_cohort",
    "record_to_dict",
    "write_records_jsonl",
    "records_to_jsonl_text",
]

_VISIT_REQUIRED = ("hadm_id", "admittime", "dischtime", "gender", "age",
                   "hospital_expire_flag", "icd_codes", "days", "drugs")


@dataclass
class Visit:
    hadm_id: str
    admittime: date
    dischtime: date
    gender: str
    age: int
    hospital_expire_flag: bool
    icd_codes: list[str]
    days: int
    drugs: list[str]
    deathtime: date | None = None


@dataclass
class PatientRecord:
    patient_id: str
    history: list[Visit] = field(default_factory=list)


def _parse_date(value, field_name: str, patient_id: str) -> date:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(value)
    except (TypeError, ValueError):
        pass
    try:
        return datetime.fromisoformat(value).date()
    except (TypeError, ValueError) as e:
        raise DataError(
            f"patient {patient_id}: field '{field_name}' is not an ISO-8601 date: {value!r}") from e


def _validate_visit(v: Visit, patient_id: str) -> None:
    if v.dischtime < v.admittime:
        raise DataError(
            f"patient {patient_id}, visit {v.hadm_id}: dischtime {v.dischtime} "
            f"precedes admittime {v.admittime}")
    if v.days < 0:
        raise DataError(f"patient {patient_id}, visit {v.hadm_id}: days must be >= 0")
    if v.age < 0:
        raise DataError(f"patient {patient_id}, visit {v.hadm_id}: age must be >= 0")


def _visit_from_dict(obj: dict, patient_id: str) -> Visit:
    for name in _VISIT_REQUIRED:
        if name not in obj:
            raise DataError(f"patient {patient_id}: visit missing required field '{name}'")
    deathtime = obj.get("deathtime")
    return Visit(
        hadm_id=str(obj["hadm_id"]),
        admittime=_parse_date(obj["admittime"], "admittime", patient_id),
        dischtime=_parse_date(obj["dischtime"], "dischtime", patient_id),
        deathtime=None if deathtime is None else _parse_date(deathtime, "deathtime", patient_id),
        gender=str(obj["gender"]),
        age=int(obj["age"]),
        hospital_expire_flag=bool(obj["hospital_expire_flag"]),
        icd_codes=[str(c) for c in obj["icd_codes"]],
        days=int(obj["days"]),
        drugs=[str(d) for d in obj["drugs"]],
    )


def parse_records(stream) -> list[PatientRecord]:
    """Parse JSON-lines text (str, file-like, or iterable of lines)."""
    if isinstance(stream, str):
        lines: Iterable[str] = stream.splitlines()
    elif hasattr(stream, "read"):
        lines = stream.read().splitlines()
    else:
        lines = stream
    out: list[PatientRecord] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"line {lineno}: malformed JSON ({e.msg})") from e
        if "patient_id" not in obj:
            raise DataError(f"line {lineno}: record missing required field 'patient_id'")
        pid = str(obj["patient_id"])
        if "history" not in obj:
            raise DataError(f"line {lineno}: record missing required field 'history' "
                            f"(patient {pid})")
        visits = [_visit_from_dict(v, pid) for v in obj["history"]]
        visits.sort(key=lambda v: (v.admittime, v.hadm_id))
        for v in visits:
            _validate_visit(v, pid)
        out.append(PatientRecord(patient_id=pid, history=visits))
    return out


def assign_label(record: PatientRecord) -> int:
    """1 iff any visit carries hospital_expire_flag."""
    for v in record.history:
        if v.hospital_expire_flag:
            return 1
    return 0


def disease_tag_for(record: PatientRecord) -> str:
    """Similarity ground truth: family prefix of the first diagnosis code
    of the first visit (leading alphabetic characters of the token)."""
    if not record.history or not record.history[0].icd_codes:
        return ""
    code = record.history[0].icd_codes[0]
    prefix = ""
    for ch in code:
        if ch.isalpha():
            prefix += ch
        else:
            break
    return prefix or code


# -- serialization -------------------------------------------------------

def record_to_dict(record: PatientRecord) -> dict:
    return {
        "patient_id": record.patient_id,
        "history": [
            {
                "hadm_id": v.hadm_id,
                "admittime": v.admittime.isoformat(),
                "dischtime": v.dischtime.isoformat(),
                "deathtime": None if v.deathtime is None else v.deathtime.isoformat(),
                "gender": v.gender,
                "age": v.age,
                "hospital_expire_flag": v.hospital_expire_flag,
                "icd_codes": list(v.icd_codes),
                "days": v.days,
                "drugs": list(v.drugs),
            }
            for v in record.history
        ],
    }


def records_to_jsonl_text(records: Iterable[PatientRecord]) -> str:
    return "".join(json.dumps(record_to_dict(r), sort_keys=True) + "\n" for r in records)


def write_records_jsonl(records: Iterable[PatientRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(records_to_jsonl_text(records))


# -- synthesis -----------------------------------------------------------

@dataclass
class CohortSpec:
    """Generator knobs for the synthetic cohort.

    The risk motif is a dedicated code pair planted in consecutive visits;
    it multiplies the mortality-flag probability, making the label a
    structural property of the graph rather than of any single token.
    """
    families: tuple[str, ...] = ("DA", "DB", "DC")
    codes_per_family: int = 20
    n_drugs: int = 30
    motif: tuple[str, str] = ("DM01", "DM02")
    p_motif: float = 0.12
    p_death_motif: float = 0.65
    p_death_base: float = 0.05
    max_visits: int = 8
    max_codes: int = 5
    max_drugs: int = 3
    cross_family_prob: float = 0.2
    p_overlap: float = 0.05
    start_year: int = 2019

    def family_codes(self, fam: str) -> list[str]:
        return [f"{fam}{i:02d}" for i in range(1, self.codes_per_family + 1)]

    def drug_tokens(self) -> list[str]:
        return [f"RX{i:02d}" for i in range(1, self.n_drugs + 1)]


def _synthesize_patient(pid: str, rng, spec: CohortSpec) -> PatientRecord:
    gender = "F" if rng.random() < 0.5 else "M"
    age = int(rng.integers(40, 90))
    family = spec.families[int(rng.integers(0, len(spec.families)))]
    pool = spec.family_codes(family)
    other_pool = [c for fam in spec.families if fam != family for c in spec.family_codes(fam)]
    drugs_pool = spec.drug_tokens()

    n_visits = int(rng.integers(1, spec.max_visits + 1))
    has_motif = rng.random() < spec.p_motif
    if has_motif and n_visits < 2:
        n_visits = 2
    motif_at = int(rng.integers(0, n_visits - 1)) if has_motif else -1

    admit = date(spec.start_year, 1, 1) + timedelta(days=int(rng.integers(0, 365)))
    visits: list[Visit] = []
    prev_disch = None
    for t in range(n_visits):
        if t > 0:
            if rng.random() < spec.p_overlap:
                # re-admission before the previous discharge: exercises the
                # overlap rule and the negative-gap clamp downstream
                admit = prev_disch - timedelta(days=int(rng.integers(1, 4)))
                if admit <= visits[-1].admittime:
                    admit = visits[-1].admittime + timedelta(days=1)
            else:
                admit = prev_disch + timedelta(days=int(rng.integers(1, 121)))
        stay = int(rng.integers(1, 15))
        disch = admit + timedelta(days=stay)
        prev_disch = disch

        n_codes = int(rng.integers(1, spec.max_codes + 1))
        codes = []
        for _ in range(n_codes):
            if other_pool and rng.random() < spec.cross_family_prob:
                codes.append(other_pool[int(rng.integers(0, len(other_pool)))])
            else:
                codes.append(pool[int(rng.integers(0, len(pool)))])
        codes = sorted(set(codes))
        if t == 0:
            # keep the family tag derivable: first code belongs to the family
            codes = [pool[int(rng.integers(0, len(pool)))]] + [c for c in codes if not c.startswith(family)]
            codes = codes[:spec.max_codes]
        if t == motif_at:
            rest = [c for c in codes if c != spec.motif[0]]
            codes = rest[: spec.max_codes - 1] + [spec.motif[0]]
        elif has_motif and t == motif_at + 1:
            rest = [c for c in codes if c != spec.motif[1]]
            codes = rest[: spec.max_codes - 1] + [spec.motif[1]]

        n_dr = int(rng.integers(0, spec.max_drugs + 1))
        drugs = sorted({drugs_pool[int(rng.integers(0, len(drugs_pool)))] for _ in range(n_dr)})
        days = int(rng.integers(1, 31))
        visits.append(Visit(
            hadm_id=f"{pid}-v{t}",
            admittime=admit,
            dischtime=disch,
            gender=gender,
            age=age,
            hospital_expire_flag=False,
            icd_codes=codes,
            days=days,
            drugs=drugs,
        ))

    p_death = spec.p_death_motif if has_motif else spec.p_death_base
    if rng.random() < p_death:
        last = visits[-1]
        visits[-1] = replace(last, hospital_expire_flag=True,
                             deathtime=last.admittime + timedelta(days=max(0, (last.dischtime - last.admittime).days - 1)))
    return PatientRecord(patient_id=pid, history=visits)


def synthesize_cohort(seed: int, n_patients: int,
                      spec: CohortSpec | None = None) -> list[PatientRecord]:
    """Deterministic synthetic cohort; one RNG sub-stream per patient."""
    if n_patients < 1:
        raise DataError("synthesize_cohort: n_patients must be >= 1")
    spec = spec or CohortSpec()
    out = []
    for i in range(n_patients):
        pid = f"p{i:05d}"
        out.append(_synthesize_patient(pid, substream(seed, f"patient:{pid}"), spec))
    return out


def iter_jsonl_file(path) -> Iterator[str]:
    with open(path, "r", encoding="utf-8") as fh:
        yield from fh
