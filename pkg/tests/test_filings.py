from datetime import date

import pytest

from insiderlab.errors import (
    DataGapError,
    Form4ParseError,
    InsufficientHistoryError,
    SchemaError,
    UnmappedIdentifierError,
    ValidationError,
)
from insiderlab.filings import (
    REJECT_INSUFFICIENT_VOLUME,
    REJECT_MARKET_CAP,
    REJECT_MAX_LAG,
    REJECT_MIN_ADDV,
    REJECT_MIN_VALUE,
    REJECT_NO_MARKET_DATA,
    REJECT_NOT_PURCHASE,
    CusipMap,
    CusipRange,
    FilterConfig,
    InsiderTransaction,
    apply_filters,
    fetch_filing_index,
    map_cusip,
    parse_form4,
    read_transactions_jsonl,
    write_form4,
    write_transactions_jsonl,
)


def doc(rows: str, filed: str = "2024-03-04", accession: str = "0001-24-000001") -> bytes:
    return f"""<?xml version="1.0"?>
<ownershipDocument>
  <documentType>4</documentType>
  <accessionNumber>{accession}</accessionNumber>
  <periodOfReport>2024-03-01</periodOfReport>
  <filedDate>{filed}</filedDate>
  <issuer>
    <issuerCik>0001234567</issuerCik>
    <issuerTradingSymbol>ACME</issuerTradingSymbol>
    <issuerCusip>123456789</issuerCusip>
  </issuer>
  <reportingOwner>
    <reportingOwnerId>
      <rptOwnerCik>0007654321</rptOwnerCik>
    </reportingOwnerId>
    <reportingOwnerRelationship>
      <isOfficer>1</isOfficer>
      <officerTitle>Chief Executive Officer</officerTitle>
    </reportingOwnerRelationship>
  </reportingOwner>
  <nonDerivativeTable>
{rows}
  </nonDerivativeTable>
</ownershipDocument>""".encode()


def row(code: str = "P", shares: str = "100", price: str = "10.00", tdate: str = "2024-03-01") -> str:
    return f"""    <nonDerivativeTransaction>
      <transactionDate><value>{tdate}</value></transactionDate>
      <transactionCoding><transactionCode>{code}</transactionCode></transactionCoding>
      <transactionAmounts>
        <transactionShares><value>{shares}</value></transactionShares>
        <transactionPricePerShare><value>{price}</value></transactionPricePerShare>
      </transactionAmounts>
    </nonDerivativeTransaction>"""


class TestParse:
    def test_single_purchase_row(self):
        txs = parse_form4(doc(row()))
        assert len(txs) == 1
        tx = txs[0]
        assert tx.accession_id == "0001-24-000001"
        assert tx.issuer_id == "0001234567"
        assert tx.cusip == "123456789"
        assert tx.ticker == "ACME"
        assert tx.insider_id == "0007654321"
        assert tx.insider_title_raw == "Chief Executive Officer"
        assert tx.transaction_date == date(2024, 3, 1)
        assert tx.disclosure_date == date(2024, 3, 4)
        assert tx.transaction_code == "P"
        assert tx.shares == 100.0
        assert tx.price_per_share == 10.0
        assert tx.transaction_value == 1000.00

    def test_purchase_and_sale_rows_both_emitted(self):
        txs = parse_form4(doc(row("P") + "\n" + row("S", shares="50", price="12.00")))
        assert [t.transaction_code for t in txs] == ["P", "S"]

    def test_missing_price_is_schema_error(self):
        bad = row().replace("<transactionPricePerShare><value>10.00</value></transactionPricePerShare>", "")
        with pytest.raises(SchemaError) as exc:
            parse_form4(doc(bad))
        assert exc.value.element == "transactionPricePerShare"
        assert "transactionPricePerShare" in str(exc.value)

    def test_malformed_xml_reports_byte_offset(self):
        data = doc(row())[:-12]  # truncate the closing tag
        with pytest.raises(Form4ParseError) as exc:
            parse_form4(data)
        assert exc.value.byte_offset is not None
        assert exc.value.byte_offset <= len(data)

    def test_negative_shares_rejected(self):
        with pytest.raises(ValidationError):
            parse_form4(doc(row(shares="-5")))

    def test_disclosure_before_transaction_rejected(self):
        with pytest.raises(ValidationError):
            parse_form4(doc(row(tdate="2024-03-10"), filed="2024-03-04"))

    def test_value_recomputed_from_shares_times_price(self):
        txs = parse_form4(doc(row(shares="333", price="3.33")))
        assert txs[0].transaction_value == pytest.approx(1108.89, abs=0.001)

    def test_round_trip_is_field_identical(self):
        original = parse_form4(doc(row() + "\n" + row(shares="40", price="9.50", tdate="2024-03-02")))
        again = parse_form4(write_form4(original))
        assert again == original


class TestCusipMap:
    def make_map(self):
        return CusipMap(
            {
                "123456789": [
                    CusipRange("PERM1", "ABC", date(2018, 1, 1), date(2020, 12, 31)),
                    CusipRange("PERM1", "ABCD", date(2021, 1, 1), date.max),
                ]
            }
        )

    def tx(self, tdate: date) -> InsiderTransaction:
        return InsiderTransaction(
            accession_id="a", issuer_id="cik", cusip="123456789", ticker="OLD",
            insider_id="i", insider_title_raw="Director",
            transaction_date=tdate, disclosure_date=tdate,
            transaction_code="P", shares=1.0, price_per_share=1.0, transaction_value=1.0,
        )

    def test_range_selection(self):
        mapped = map_cusip(self.tx(date(2022, 5, 1)), self.make_map())
        assert mapped.ticker == "ABCD"
        assert mapped.issuer_id == "PERM1"

    def test_gap_raises_unmapped(self):
        gap_map = CusipMap(
            {"123456789": [CusipRange("PERM1", "ABC", date(2018, 1, 1), date(2019, 12, 31))]}
        )
        with pytest.raises(UnmappedIdentifierError) as exc:
            map_cusip(self.tx(date(2021, 1, 1)), gap_map)
        assert exc.value.cusip == "123456789"

    def test_identity_entry_changes_only_mapped_fields(self):
        tx = self.tx(date(2019, 6, 1))
        mapped = map_cusip(tx, self.make_map())
        assert mapped.ticker == "ABC"
        assert (mapped.cusip, mapped.shares, mapped.transaction_date) == (tx.cusip, tx.shares, tx.transaction_date)

    def test_overlapping_ranges_rejected(self):
        with pytest.raises(ValidationError):
            CusipMap(
                {
                    "123456789": [
                        CusipRange("P1", "A", date(2018, 1, 1), date(2020, 1, 1)),
                        CusipRange("P1", "B", date(2019, 6, 1), date(2021, 1, 1)),
                    ]
                }
            )

    def test_map_from_csv(self, tmp_path):
        path = tmp_path / "map.csv"
        path.write_text(
            "cusip,permanent_id,ticker,effective_from,effective_to\n"
            "123456789,PERM1,ABC,2018-01-01,2020-12-31\n"
            "123456789,PERM1,ABCD,2021-01-01,\n"
        )
        cmap = CusipMap.from_csv(path)
        assert cmap.lookup("123456789", date(2024, 1, 1)).ticker == "ABCD"


class StubMarket:
    """Duck-typed store: fixed cap/ADDV per ticker, gaps raise."""

    def __init__(self, caps=None, addvs=None, addv_errors=()):
        self.caps = caps or {}
        self.addvs = addvs or {}
        self.addv_errors = set(addv_errors)
        self.queried_dates = []

    def asof_market_cap(self, ticker, d):
        self.queried_dates.append(d)
        if ticker not in self.caps:
            raise DataGapError(f"no bars for {ticker}", ticker=ticker)
        return self.caps[ticker]

    def asof_addv(self, ticker, d, window_days=30, min_days=10):
        self.queried_dates.append(d)
        if ticker in self.addv_errors:
            raise InsufficientHistoryError("too few volume days", ticker=ticker)
        if ticker not in self.addvs:
            raise DataGapError(f"no bars for {ticker}", ticker=ticker)
        return self.addvs[ticker]


def make_tx(
    ticker="ABC",
    code="P",
    value=27000.0,
    lag=2,
    tdate=date(2024, 3, 1),
) -> InsiderTransaction:
    from datetime import timedelta

    shares = value / 10.0
    return InsiderTransaction(
        accession_id=f"a-{ticker}-{tdate}-{value}",
        issuer_id="P1",
        cusip="123456789",
        ticker=ticker,
        insider_id="i1",
        insider_title_raw="Director",
        transaction_date=tdate,
        disclosure_date=tdate + timedelta(days=lag),
        transaction_code=code,
        shares=shares,
        price_per_share=10.0,
        transaction_value=value,
    )


class TestFilters:
    def market(self):
        return StubMarket(caps={"ABC": 100e6}, addvs={"ABC": 500000.0})

    def test_representative_purchase_kept(self):
        kept, rejected = apply_filters([make_tx()], FilterConfig(), self.market())
        assert len(kept) == 1 and not rejected

    def test_min_value_boundary(self):
        kept, rejected = apply_filters(
            [make_tx(value=4999.99), make_tx(value=5000.0)], FilterConfig(), self.market()
        )
        assert len(kept) == 1
        assert rejected[0][1] == REJECT_MIN_VALUE

    def test_max_lag_boundary(self):
        kept, rejected = apply_filters(
            [make_tx(lag=91), make_tx(lag=90)], FilterConfig(), self.market()
        )
        assert len(kept) == 1
        assert rejected[0][1] == REJECT_MAX_LAG

    def test_non_purchase_rejected(self):
        _, rejected = apply_filters([make_tx(code="S")], FilterConfig(), self.market())
        assert rejected[0][1] == REJECT_NOT_PURCHASE

    def test_cap_range_inclusive(self):
        market = StubMarket(caps={"ABC": 30e6}, addvs={"ABC": 500000.0})
        kept, _ = apply_filters([make_tx()], FilterConfig(), market)
        assert len(kept) == 1
        market.caps["ABC"] = 29.9e6
        _, rejected = apply_filters([make_tx()], FilterConfig(), market)
        assert rejected[0][1] == REJECT_MARKET_CAP

    def test_addv_boundary(self):
        market = StubMarket(caps={"ABC": 100e6}, addvs={"ABC": 199999.0})
        _, rejected = apply_filters([make_tx()], FilterConfig(), market)
        assert rejected[0][1] == REJECT_MIN_ADDV

    def test_missing_market_data_lenient_vs_strict(self):
        market = StubMarket()
        _, rejected = apply_filters([make_tx()], FilterConfig(), market)
        assert rejected[0][1] == REJECT_NO_MARKET_DATA
        with pytest.raises(DataGapError):
            apply_filters([make_tx()], FilterConfig(), market, strict=True)

    def test_insufficient_volume_history_reason(self):
        market = StubMarket(caps={"ABC": 100e6}, addv_errors={"ABC"})
        _, rejected = apply_filters([make_tx()], FilterConfig(), market)
        assert rejected[0][1] == REJECT_INSUFFICIENT_VOLUME

    def test_partition_property(self):
        txs = [
            make_tx(value=v, lag=lag, code=code)
            for v in (1000.0, 27000.0)
            for lag in (2, 95)
            for code in ("P", "S")
        ]
        kept, rejected = apply_filters(txs, FilterConfig(), self.market())
        assert len(kept) + len(rejected) == len(txs)
        assert {t.accession_id for t in kept} | {t.accession_id for t, _ in rejected} == {
            t.accession_id for t in txs
        }

    def test_loosening_thresholds_never_shrinks_kept(self):
        txs = [
            make_tx(value=4999.99),
            make_tx(value=27000.0),
            make_tx(lag=91),
            make_tx(code="S"),
        ]
        market = StubMarket(caps={"ABC": 29e6}, addvs={"ABC": 150000.0})
        base_cfg = FilterConfig()
        base_kept, _ = apply_filters(txs, base_cfg, market)
        looser = [
            FilterConfig(min_value=1.0),
            FilterConfig(max_lag_days=120),
            FilterConfig(min_cap=1e6),
            FilterConfig(max_cap=1e9),
            FilterConfig(min_addv=1.0),
        ]
        base_ids = {t.accession_id for t in base_kept}
        for cfg in looser:
            kept, _ = apply_filters(txs, cfg, market)
            assert base_ids <= {t.accession_id for t in kept}

    def test_point_in_time_queries_at_transaction_date(self):
        market = self.market()
        tx = make_tx()
        apply_filters([tx], FilterConfig(), market)
        assert market.queried_dates == [tx.transaction_date, tx.transaction_date]

    def test_filter_config_validation(self):
        with pytest.raises(ValidationError):
            FilterConfig(min_cap=500e6, max_cap=30e6)
        with pytest.raises(ValidationError):
            FilterConfig(min_value=0.0)


class TestFilingIndex:
    def test_lexicographic_order(self, tmp_path):
        (tmp_path / "b.xml").write_text("<x/>")
        (tmp_path / "a.xml").write_text("<x/>")
        (tmp_path / "notes.txt").write_text("ignored")
        assert [p.split("/")[-1] for p in fetch_filing_index(tmp_path)] == ["a.xml", "b.xml"]

    def test_empty_directory(self, tmp_path):
        assert fetch_filing_index(tmp_path) == []

    def test_unreadable_source(self, tmp_path):
        with pytest.raises(OSError):
            fetch_filing_index(tmp_path / "missing")

    def test_descriptor_downloads_to_cache(self, tmp_path):
        src = tmp_path / "remote"
        src.mkdir()
        (src / "a.xml").write_text("<x/>")
        cache = tmp_path / "cache"
        desc = tmp_path / "desc.json"
        desc.write_text(
            '{"base_url": "file://%s", "documents": ["a.xml"], "cache_dir": "%s"}' % (src, cache)
        )
        paths = fetch_filing_index(desc)
        assert len(paths) == 1 and paths[0].endswith("a.xml")
        assert (cache / "a.xml").read_text() == "<x/>"


def test_jsonl_round_trip(tmp_path):
    txs = parse_form4(doc(row() + "\n" + row("S", shares="7", price="2.50")))
    path = tmp_path / "txs.jsonl"
    write_transactions_jsonl(path, txs)
    assert read_transactions_jsonl(path) == txs
    rej = tmp_path / "rej.jsonl"
    write_transactions_jsonl(rej, txs, reasons=["min_value", "not_purchase"])
    lines = rej.read_text().strip().splitlines()
    assert '"reject_reason": "min_value"' in lines[0]
