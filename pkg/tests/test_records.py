import pytest

from mcall import Signature, SignatureError
from mcall.records import canonical_vote_key, conforms


class TestSignature:
    def test_disjoint_names_enforced(self):
        with pytest.raises(SignatureError):
            Signature(inputs=[("a", "number")], outputs=[("a", "number")])
        with pytest.raises(SignatureError):
            Signature(inputs=[("a", "number")], outputs=[("y", "number")],
                      context_params=[("a", "string")])

    def test_duplicate_param_rejected(self):
        with pytest.raises(SignatureError):
            Signature(inputs=[("a", "number"), ("a", "string")])

    def test_reserved_prefix_rejected(self):
        with pytest.raises(SignatureError):
            Signature(inputs=[("__mc_x", "number")])
        with pytest.raises(SignatureError):
            Signature(outputs=[("__mc_prev", "number")])

    def test_prev_param_allowed_as_input(self):
        sig = Signature(inputs=[("__mc_prev", "map")], outputs=[("y", "number")])
        assert sig.input_names == ("__mc_prev",)

    def test_unknown_kind_rejected(self):
        with pytest.raises(SignatureError):
            Signature(inputs=[("a", "float64")])

    def test_roundtrip_dict(self):
        sig = Signature(inputs=[("a", "number"), ("b", "string")],
                        outputs=[("y", "boolean")], context_params=[("c", "any")])
        assert Signature.from_dict(sig.to_dict()) == sig


class TestRecordValidation:
    def test_inputs_must_cover_declared(self, sig):
        with pytest.raises(SignatureError):
            sig.validate_inputs({})

    def test_undeclared_input_rejected(self, sig):
        with pytest.raises(SignatureError):
            sig.validate_inputs({"v": 1, "extra": 2})

    def test_kind_mismatch_rejected(self, sig):
        with pytest.raises(SignatureError):
            sig.validate_inputs({"v": "not-a-number"})

    def test_bool_is_not_number(self):
        assert not conforms(True, "number")
        assert conforms(True, "boolean")
        assert conforms(1.5, "number")
        assert conforms([1], "list")
        assert conforms({"k": 1}, "map")

    def test_context_allows_reserved_extras(self):
        sig = Signature(inputs=[("v", "number")], outputs=[("y", "number")],
                        context_params=[("c", "number")])
        sig.validate_context({"c": 1, "__mc_id": "x"})
        with pytest.raises(SignatureError):
            sig.validate_context({"c": 1, "undeclared": 2})


class TestVoteKey:
    def test_numbers_sort_before_strings(self):
        values = ["b", 2, "a", 1]
        assert sorted(values, key=canonical_vote_key) == [1, 2, "a", "b"]

    def test_bool_counts_as_number(self):
        assert canonical_vote_key(False) < canonical_vote_key(1)
