"""Form 4 parsing, identifier mapping, and the purchase filter chain.

The parser reads the ownership-document XML subset described in
docs/formats.md: an issuer block, one reporting-owner block, and a
non-derivative transaction table, plus two top-level bookkeeping elements
(`accessionNumber`, `filedDate`) that a file-based pipeline needs because it
has no filing index to join against. All transaction rows are emitted
regardless of code; purchase screening happens in `apply_filters` so parse
fidelity stays testable on its own.
"""
from __future__ import annotations

import csv
import json
import logging
import urllib.request
import xml.etree.ElementTree as ET
from dataclasses import dataclass, replace
from datetime import date
from pathlib import Path

from .errors import (
    DataGapError,
    Form4ParseError,
    InsufficientHistoryError,
    SchemaError,
    UnmappedIdentifierError,
    ValidationError,
)
from .marketdata import parse_iso_date

log = logging.getLogger(__name__)

VALUE_MISMATCH_TOLERANCE = 0.01

REJECT_NOT_PURCHASE = "not_purchase"
REJECT_MAX_LAG = "max_lag"
REJECT_MIN_VALUE = "min_value"
REJECT_MARKET_CAP = "market_cap_range"
REJECT_MIN_ADDV = "min_addv"
REJECT_NO_MARKET_DATA = "no_market_data"
REJECT_INSUFFICIENT_VOLUME = "insufficient_volume_history"


@dataclass(frozen=True)
class InsiderTransaction:
    """One parsed Form 4 transaction row."""

    accession_id: str
    issuer_id: str
    cusip: str
    ticker: str
    insider_id: str
    insider_title_raw: str
    transaction_date: date
    disclosure_date: date
    transaction_code: str
    shares: float
    price_per_share: float
    transaction_value: float

    @property
    def lag_days(self) -> int:
        return (self.disclosure_date - self.transaction_date).days


@dataclass(frozen=True)
class FilterConfig:
    """Universe filter thresholds (values stated in currency units)."""

    max_lag_days: int = 90
    min_value: float = 5000.0
    min_cap: float = 30e6
    max_cap: float = 500e6
    min_addv: float = 200000.0
    addv_window_days: int = 30
    min_addv_days: int = 10

    def __post_init__(self):
        for name in ("max_lag_days", "min_value", "min_cap", "max_cap", "min_addv", "addv_window_days", "min_addv_days"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"FilterConfig.{name} must be strictly positive")
        if self.min_cap >= self.max_cap:
            raise ValidationError("FilterConfig requires min_cap < max_cap")


# -- XML parsing -------------------------------------------------------------


def _byte_offset(data: bytes, line: int, column: int) -> int:
    lines = data.split(b"\n")
    return sum(len(l) + 1 for l in lines[: line - 1]) + column


def _text(root: ET.Element, path: str) -> str | None:
    el = root.find(path)
    if el is None or el.text is None:
        return None
    return el.text.strip()


def _require(root: ET.Element, path: str, element_name: str) -> str:
    val = _text(root, path)
    if val is None or val == "":
        raise SchemaError(f"missing mandatory element {element_name}", element=element_name)
    return val


def _owner_title(rel: ET.Element | None) -> str:
    if rel is None:
        return "Other"
    title = _text(rel, "officerTitle")
    if title:
        return title
    if (_text(rel, "isDirector") or "").lower() in {"1", "true", "yes"}:
        return "Director"
    return "Other"


def parse_form4(document: bytes | str, accession_hint: str = "") -> list[InsiderTransaction]:
    """Parse one ownership document into transaction records (all codes kept)."""
    data = document.encode() if isinstance(document, str) else document
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, col = exc.position
        offset = _byte_offset(data, line, col)
        raise Form4ParseError(f"malformed XML at byte {offset}: {exc}", byte_offset=offset) from exc

    accession = _text(root, "accessionNumber") or accession_hint
    if not accession:
        raise SchemaError("missing mandatory element accessionNumber", element="accessionNumber")
    issuer_id = _require(root, "issuer/issuerCik", "issuerCik")
    ticker = _require(root, "issuer/issuerTradingSymbol", "issuerTradingSymbol")
    cusip = _require(root, "issuer/issuerCusip", "issuerCusip")
    insider_id = _require(root, "reportingOwner/reportingOwnerId/rptOwnerCik", "rptOwnerCik")
    title = _owner_title(root.find("reportingOwner/reportingOwnerRelationship"))
    disclosure = parse_iso_date(_require(root, "filedDate", "filedDate"), "filedDate")

    table = root.find("nonDerivativeTable")
    if table is None:
        raise SchemaError("missing mandatory element nonDerivativeTable", element="nonDerivativeTable")

    txs = []
    for row in table.findall("nonDerivativeTransaction"):
        tdate = parse_iso_date(_require(row, "transactionDate/value", "transactionDate"), "transactionDate")
        code = _require(row, "transactionCoding/transactionCode", "transactionCode")
        shares = float(_require(row, "transactionAmounts/transactionShares/value", "transactionShares"))
        price = float(
            _require(row, "transactionAmounts/transactionPricePerShare/value", "transactionPricePerShare")
        )
        if shares < 0:
            raise ValidationError(f"negative shares {shares} in {accession}")
        if price < 0:
            raise ValidationError(f"negative price {price} in {accession}")
        if disclosure < tdate:
            raise ValidationError(
                f"disclosure_date {disclosure} precedes transaction_date {tdate} in {accession}"
            )
        txs.append(
            InsiderTransaction(
                accession_id=accession,
                issuer_id=issuer_id,
                cusip=cusip,
                ticker=ticker,
                insider_id=insider_id,
                insider_title_raw=title,
                transaction_date=tdate,
                disclosure_date=disclosure,
                transaction_code=code,
                shares=shares,
                price_per_share=price,
                transaction_value=round(shares * price, 2),
            )
        )
    return txs


def write_form4(txs: list[InsiderTransaction]) -> bytes:
    """Serialize transactions that share one filing back to subset XML."""
    if not txs:
        raise ValidationError("cannot serialize an empty transaction list")
    first = txs[0]
    for tx in txs[1:]:
        if (tx.accession_id, tx.insider_id, tx.disclosure_date) != (
            first.accession_id,
            first.insider_id,
            first.disclosure_date,
        ):
            raise ValidationError("all transactions in one document must share accession, insider, and filed date")

    root = ET.Element("ownershipDocument")
    ET.SubElement(root, "documentType").text = "4"
    ET.SubElement(root, "accessionNumber").text = first.accession_id
    ET.SubElement(root, "periodOfReport").text = first.transaction_date.isoformat()
    ET.SubElement(root, "filedDate").text = first.disclosure_date.isoformat()
    issuer = ET.SubElement(root, "issuer")
    ET.SubElement(issuer, "issuerCik").text = first.issuer_id
    ET.SubElement(issuer, "issuerTradingSymbol").text = first.ticker
    ET.SubElement(issuer, "issuerCusip").text = first.cusip
    owner = ET.SubElement(root, "reportingOwner")
    owner_id = ET.SubElement(owner, "reportingOwnerId")
    ET.SubElement(owner_id, "rptOwnerCik").text = first.insider_id
    rel = ET.SubElement(owner, "reportingOwnerRelationship")
    ET.SubElement(rel, "officerTitle").text = first.insider_title_raw
    table = ET.SubElement(root, "nonDerivativeTable")
    for tx in txs:
        row = ET.SubElement(table, "nonDerivativeTransaction")
        td = ET.SubElement(row, "transactionDate")
        ET.SubElement(td, "value").text = tx.transaction_date.isoformat()
        coding = ET.SubElement(row, "transactionCoding")
        ET.SubElement(coding, "transactionCode").text = tx.transaction_code
        amounts = ET.SubElement(row, "transactionAmounts")
        sh = ET.SubElement(amounts, "transactionShares")
        ET.SubElement(sh, "value").text = repr(float(tx.shares))
        pr = ET.SubElement(amounts, "transactionPricePerShare")
        ET.SubElement(pr, "value").text = repr(float(tx.price_per_share))
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


# -- CUSIP mapping ------------------------------------------------------------


@dataclass(frozen=True)
class CusipRange:
    permanent_id: str
    ticker: str
    effective_from: date
    effective_to: date


class CusipMap:
    """cusip -> dated (permanent_id, ticker) ranges; ranges must not overlap."""

    def __init__(self, entries: dict[str, list[CusipRange]]):
        self.entries = {}
        for cusip, ranges in entries.items():
            ranges = sorted(ranges, key=lambda r: r.effective_from)
            for a, b in zip(ranges, ranges[1:]):
                if a.effective_to >= b.effective_from:
                    raise ValidationError(f"overlapping effective ranges for cusip {cusip}")
            self.entries[cusip] = ranges

    @classmethod
    def from_csv(cls, path) -> "CusipMap":
        entries: dict[str, list[CusipRange]] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            expected = {"cusip", "permanent_id", "ticker", "effective_from", "effective_to"}
            if reader.fieldnames is None or set(reader.fieldnames) != expected:
                raise ValidationError(f"cusip map header must be {sorted(expected)}, got {reader.fieldnames}")
            for lineno, row in enumerate(reader, start=2):
                eff_to = row["effective_to"].strip()
                entries.setdefault(row["cusip"].strip(), []).append(
                    CusipRange(
                        permanent_id=row["permanent_id"].strip(),
                        ticker=row["ticker"].strip(),
                        effective_from=parse_iso_date(row["effective_from"], f"cusip map row {lineno}"),
                        effective_to=parse_iso_date(eff_to, f"cusip map row {lineno}") if eff_to else date.max,
                    )
                )
        return cls(entries)

    def lookup(self, cusip: str, d: date) -> CusipRange:
        for r in self.entries.get(cusip, ()):
            if r.effective_from <= d <= r.effective_to:
                return r
        raise UnmappedIdentifierError(f"no map entry for cusip {cusip} covering {d}", cusip=cusip)


def map_cusip(tx: InsiderTransaction, cusip_map: CusipMap) -> InsiderTransaction:
    """Replace ticker and issuer_id with the mapping entry covering the trade date."""
    r = cusip_map.lookup(tx.cusip, tx.transaction_date)
    return replace(tx, ticker=r.ticker, issuer_id=r.permanent_id)


# -- filter chain --------------------------------------------------------------


def apply_filters(
    txs: list[InsiderTransaction],
    cfg: FilterConfig,
    market,
    strict: bool = False,
) -> tuple[list[InsiderTransaction], list[tuple[InsiderTransaction, str]]]:
    """Partition transactions into (kept, rejected-with-reason).

    Market cap and ADDV are evaluated as of the transaction date, never later.
    In lenient mode missing market data becomes a rejection reason; in strict
    mode it propagates as an error.
    """
    kept: list[InsiderTransaction] = []
    rejected: list[tuple[InsiderTransaction, str]] = []
    for tx in txs:
        reason = _filter_reason(tx, cfg, market, strict)
        if reason is None:
            kept.append(tx)
        else:
            rejected.append((tx, reason))
    return kept, rejected


def _filter_reason(tx: InsiderTransaction, cfg: FilterConfig, market, strict: bool) -> str | None:
    if tx.transaction_code != "P":
        return REJECT_NOT_PURCHASE
    if tx.lag_days > cfg.max_lag_days:
        return REJECT_MAX_LAG
    if tx.transaction_value < cfg.min_value:
        return REJECT_MIN_VALUE
    try:
        cap = market.asof_market_cap(tx.ticker, tx.transaction_date)
    except DataGapError:
        if strict:
            raise
        return REJECT_NO_MARKET_DATA
    if not (cfg.min_cap <= cap <= cfg.max_cap):
        return REJECT_MARKET_CAP
    try:
        addv = market.asof_addv(
            tx.ticker, tx.transaction_date, window_days=cfg.addv_window_days, min_days=cfg.min_addv_days
        )
    except InsufficientHistoryError:
        if strict:
            raise
        return REJECT_INSUFFICIENT_VOLUME
    except DataGapError:
        if strict:
            raise
        return REJECT_NO_MARKET_DATA
    if addv < cfg.min_addv:
        return REJECT_MIN_ADDV
    return None


# -- filing index --------------------------------------------------------------


def fetch_filing_index(source) -> list[str]:
    """List filing documents from a local directory or a descriptor JSON.

    A descriptor is a JSON file `{"base_url": ..., "documents": [...],
    "cache_dir": ...}`; listed documents are downloaded into the cache
    directory and the local paths are returned. Ordering is lexicographic in
    both modes.
    """
    src = Path(source)
    if src.is_dir():
        return sorted(str(p) for p in src.iterdir() if p.suffix.lower() == ".xml")
    if src.is_file() and src.suffix == ".json":
        desc = json.loads(src.read_text())
        cache = Path(desc.get("cache_dir") or (src.parent / "filing_cache"))
        cache.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in desc["documents"]:
            target = cache / name
            if not target.exists():
                url = desc["base_url"].rstrip("/") + "/" + name
                with urllib.request.urlopen(url) as resp:
                    target.write_bytes(resp.read())
            paths.append(str(target))
        return sorted(paths)
    raise OSError(f"filing source {source} is not a readable directory or descriptor file")


# -- JSONL I/O -------------------------------------------------------------------


def transaction_to_dict(tx: InsiderTransaction) -> dict:
    return {
        "accession_id": tx.accession_id,
        "issuer_id": tx.issuer_id,
        "cusip": tx.cusip,
        "ticker": tx.ticker,
        "insider_id": tx.insider_id,
        "insider_title_raw": tx.insider_title_raw,
        "transaction_date": tx.transaction_date.isoformat(),
        "disclosure_date": tx.disclosure_date.isoformat(),
        "transaction_code": tx.transaction_code,
        "shares": tx.shares,
        "price_per_share": tx.price_per_share,
        "transaction_value": tx.transaction_value,
    }


def transaction_from_dict(rec: dict) -> InsiderTransaction:
    return InsiderTransaction(
        accession_id=rec["accession_id"],
        issuer_id=rec["issuer_id"],
        cusip=rec["cusip"],
        ticker=rec["ticker"],
        insider_id=rec["insider_id"],
        insider_title_raw=rec["insider_title_raw"],
        transaction_date=date.fromisoformat(rec["transaction_date"]),
        disclosure_date=date.fromisoformat(rec["disclosure_date"]),
        transaction_code=rec["transaction_code"],
        shares=float(rec["shares"]),
        price_per_share=float(rec["price_per_share"]),
        transaction_value=float(rec["transaction_value"]),
    )


def write_transactions_jsonl(path, txs, reasons=None) -> None:
    with open(path, "w") as fh:
        for i, tx in enumerate(txs):
            rec = transaction_to_dict(tx)
            if reasons is not None:
                rec["reject_reason"] = reasons[i]
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_transactions_jsonl(path) -> list[InsiderTransaction]:
    txs = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                txs.append(transaction_from_dict(json.loads(line)))
    return txs
