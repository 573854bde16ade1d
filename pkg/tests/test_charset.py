import pytest
from hypothesis import given, strategies as st

from crnnkit.charset import (
    Charset,
    CharsetError,
    OutOfCharsetError,
    Sample,
    build_charset,
    decode_indices,
    encode,
    read_annotations,
    write_annotations,
)


def test_build_orders_by_first_occurrence():
    cs = build_charset(["ab", "ba"])
    assert cs.chars == ("a", "b")
    assert len(cs) == 2


def test_build_drops_spaces():
    cs = build_charset([Sample("x.pgm", "a b")])
    assert cs.chars == ("a", "b")


def test_space_only_label_contributes_nothing():
    cs = build_charset(["   ", "c"])
    assert cs.chars == ("c",)


def test_empty_corpus():
    with pytest.raises(CharsetError, match="empty corpus"):
        build_charset([])


def test_encode_decode_examples():
    cs = Charset(("a", "b"))
    assert encode(cs, "") == []
    assert encode(cs, "ab") == [1, 2]
    assert encode(cs, "a b") == [1, 2]
    assert decode_indices(cs, []) == ""
    assert decode_indices(cs, [1, 2]) == "ab"


def test_encode_reports_missing_characters():
    cs = Charset(("a", "b"))
    with pytest.raises(OutOfCharsetError) as info:
        encode(cs, "ax")
    assert info.value.missing == [(1, "x")]


@pytest.mark.parametrize("bad", [[0], [3], [1, -1]])
def test_decode_rejects_out_of_range(bad):
    with pytest.raises(CharsetError, match="index out of charset"):
        decode_indices(Charset(("a", "b")), bad)


def test_blank_is_zero_and_unmapped():
    cs = Charset(("x", "y", "z"))
    assert cs.blank_index == 0
    assert cs.num_classes == 4
    assert [cs.index_of(cs.char_at(i)) for i in range(1, 4)] == [1, 2, 3]


def test_rejects_duplicates_and_space():
    with pytest.raises(CharsetError):
        Charset(("a", "a"))
    with pytest.raises(CharsetError):
        Charset(("a", " "))


labels = st.lists(st.text(alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\n\r\t"), max_size=12), min_size=1, max_size=20)


@given(labels)
def test_round_trip_property(corpus):
    cs = build_charset(corpus)
    for lab in corpus:
        assert decode_indices(cs, encode(cs, lab)) == lab.replace(" ", "")
    assert build_charset(corpus).to_text() == cs.to_text()
    assert Charset.from_text(cs.to_text()) == cs


def test_file_round_trip_is_byte_identical(tmp_path):
    cs = build_charset(["你好 world", "ab　c"])
    p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
    cs.save(p1)
    Charset.load(p1).save(p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_text(encoding="utf-8").splitlines()[0] == "#ctc-charset v1"


def test_missing_header(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("a\nb\n", encoding="utf-8")
    with pytest.raises(CharsetError, match="header"):
        Charset.load(p)


def test_annotation_round_trip(tmp_path):
    ann = tmp_path / "ann.tsv"
    ann.write_text("img/1.pgm\tab c\nimg/2.pgm\tx\n", encoding="utf-8")
    samples = read_annotations(ann)
    assert [s.label for s in samples] == ["ab c", "x"]
    assert samples[0].path == str(tmp_path / "img/1.pgm")
    out = tmp_path / "out.tsv"
    write_annotations(out, samples)
    assert out.read_text(encoding="utf-8") == ann.read_text(encoding="utf-8")
