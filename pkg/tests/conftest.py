import pytest

from mcall import CallerConfig, CallTarget, Runtime, Signature


@pytest.fixture
def runtime():
    return Runtime()


@pytest.fixture
def sig():
    """One numeric input, one numeric output."""
    return Signature(inputs=[("v", "number")], outputs=[("y", "number")])


@pytest.fixture
def fraud_sig():
    return Signature(inputs=[("amount", "number")], outputs=[("fraud", "number")])


def identity_member(runtime, sig, id=None):
    """A function member echoing its input parameter into the output."""
    in_name = sig.input_names[0]
    out_name = sig.output_names[0]
    return runtime.function_callable(
        lambda record, _i=in_name, _o=out_name: {_o: record[_i]},
        sig, id=id, raw=True)


def constant_member(runtime, sig, value, id=None):
    out_name = sig.output_names[0]
    return runtime.function_callable(
        lambda record, _o=out_name, _v=value: {_o: _v}, sig, id=id, raw=True)


def make_caller(runtime, sig, name="c", host_fn=None, config=None, **config_kw):
    host = None
    if host_fn is not None:
        host = runtime.function_callable(host_fn, sig, raw=True)
    if config is None:
        if "call_target" not in config_kw:
            config_kw["call_target"] = CallTarget.HOST if host else CallTarget.REGISTERED
        config = CallerConfig(**config_kw)
    return runtime.create_caller(name, sig, config=config, host=host)
