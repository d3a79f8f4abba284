import itertools

import pytest
from hypothesis import given, settings, strategies as st

from l2finality.txn import (DEFAULT_COSTS, FEE_SINK, CostTable, Malformed, NoOp, Semantics, Status,
                            SwapBuy, SwapSell, Transaction, Transfer, Wft, call_component,
                            check_wft, decode_action, decode_transaction, encode_action,
                            encode_transaction, execute, gas_component, swap_output,
                            token_totals, worst_case_debit)
from l2finality.vmstate import Key, State

import oracles


def pool_state(rn=1000, ra=1000, **balances):
    entries = {Key.reserve(1, 0): rn, Key.reserve(1, 1): ra}
    for name, v in balances.items():
        entries[Key.account(int(name[1:]))] = v
    return State(entries)


def to_oracle(s: State) -> dict:
    names = {0: "acct", 1: "res", 2: "hold"}
    out = {}
    for k, v in s.items():
        out[(names[int(k.kind)], k.ident) if k.kind == 0 else (names[int(k.kind)], k.ident, k.index)] = v
    return out


def test_transfer_moves_funds():
    s = State({Key.account(1): 100})
    r = call_component(Transaction(1, 1, Transfer(2, 10), 21, 0), s)
    assert r.state[Key.account(1)] == 90 and r.state[Key.account(2)] == 10


def test_transfer_insufficient_aborts_unchanged():
    s = State({Key.account(1): 3})
    r = call_component(Transaction(1, 1, Transfer(2, 10), 21, 0), s)
    assert r.aborted and r.state is s


def test_transfer_checks_balance_net_of_worst_case_gas():
    s = State({Key.account(1): 100})
    assert call_component(Transaction(1, 1, Transfer(2, 90), 10, 1), s).aborted is False
    assert call_component(Transaction(1, 1, Transfer(2, 91), 10, 1), s).aborted


def test_gas_costs():
    assert gas_component(Transaction(1, 1, NoOp(), 21, 1), State()) == 10
    assert gas_component(Transaction(1, 1, Transfer(2, 1), 20, 1), State()) is None
    assert gas_component(Transaction(1, 1, Malformed(b"\xff"), 5, 1), State()) == 5
    assert gas_component(Transaction(1, 1, SwapBuy(1, 1), 100, 1), State()) == 100


def test_exhausted_charges_limit_times_price_only():
    s = pool_state(a1=10_000)
    t = Transaction(1, 1, SwapBuy(1, 50), 99, 3)
    out = execute(t, s)
    assert out.status is Status.GAS_EXHAUSTED and out.gas_used == 99
    assert out.new_state[Key.account(1)] == 10_000 - 99 * 3
    assert out.new_state[Key.account(FEE_SINK)] == 99 * 3
    changed = {k for k in set(s.keys()) | set(out.new_state.keys()) if s[k] != out.new_state[k]}
    assert changed == {Key.account(1), Key.account(FEE_SINK)}


def test_committed_transfer_balance():
    s = State({Key.account(1): 1000})
    out = execute(Transaction(1, 1, Transfer(2, 100), 50, 2), s)
    assert out.status is Status.COMMITTED
    assert out.new_state[Key.account(1)] == 1000 - 100 - 21 * 2


def test_malformed_pays_abort_fee():
    s = State({Key.account(1): 1000, Key.account(2): 5})
    out = execute(Transaction(1, 1, Malformed(b"junk"), 50, 3), s)
    assert out.status is Status.ABORTED and out.gas_used == 5
    assert out.new_state == s.update({Key.account(1): 1000 - 15, Key.account(FEE_SINK): 15})


def test_gas_underpaid_clamps_at_zero():
    s = State({Key.account(1): 4})
    out = execute(Transaction(1, 1, NoOp(), 50, 1), s)
    assert out.new_state[Key.account(1)] == 0 and out.gas_underpaid
    assert out.new_state[Key.account(FEE_SINK)] == 4


def test_swap_output_matches_oracle():
    for r_in, r_out, a in itertools.product((1, 7, 100, 10**6), (1, 9, 100, 10**6), (1, 3, 50, 10**5)):
        assert swap_output(r_in, r_out, a) == oracles.out_amount(r_in, r_out, a)


def test_buy_then_sell_keeps_product_within_rounding():
    for rn, ra, amount in itertools.product(range(20, 200, 37), range(20, 200, 41), (1, 5, 19, 60)):
        s = pool_state(rn, ra, a1=10**6)
        after_buy = execute(Transaction(1, 1, SwapBuy(1, amount), 100, 0), s)
        if after_buy.status is not Status.COMMITTED:
            continue
        got = after_buy.new_state[Key.slot(1, 1)]
        after_sell = execute(Transaction(2, 1, SwapSell(1, got), 100, 0), after_buy.new_state).new_state
        k0 = rn * ra
        for st_ in (after_buy.new_state, after_sell):
            k = st_[Key.reserve(1, 0)] * st_[Key.reserve(1, 1)]
            # floor rounding only ever leaves extra in the pool
            assert k >= k0
            assert k - k0 <= max(st_[Key.reserve(1, 0)], st_[Key.reserve(1, 1)]) * 2


def test_swaps_abort_cases():
    s = pool_state(a1=10**6)
    assert call_component(Transaction(1, 1, SwapBuy(2, 10), 100, 0), s).abort_reason == "no such pool"
    assert call_component(Transaction(1, 1, SwapBuy(1, 0), 100, 0), s).aborted
    assert call_component(Transaction(1, 1, SwapSell(1, 10), 100, 0), s).abort_reason == \
        "insufficient asset holding"
    tiny = pool_state(1000, 1, a1=10**6)
    assert call_component(Transaction(1, 1, SwapBuy(1, 5), 100, 0), tiny).abort_reason == "zero swap output"


def test_unchecked_sell_bug_pays_for_unheld_asset():
    s = pool_state(a5=100)
    t = Transaction(1, 5, SwapSell(1, 500), 100, 0)
    assert execute(t, s).status is Status.ABORTED
    buggy = Semantics(bugs={"unchecked_sell"})
    out = buggy(t, s)
    assert out.status is Status.COMMITTED
    assert out.new_state[Key.account(5)] == 100 + swap_output(1000, 1000, 500)
    assert buggy.patched()(t, s).status is Status.ABORTED
    with pytest.raises(ValueError):
        Semantics(bugs={"nonsense"})


ops = st.one_of(
    st.tuples(st.just("transfer"), st.integers(0, 4), st.integers(0, 3000)),
    st.tuples(st.just("buy"), st.integers(1, 2), st.integers(0, 3000)),
    st.tuples(st.just("sell"), st.integers(1, 2), st.integers(0, 3000)),
    st.tuples(st.just("noop")),
    st.tuples(st.just("malformed")),
)


def make(op, sender, gas_limit, price):
    kind = op[0]
    action = {"transfer": lambda: Transfer(op[1], op[2]), "buy": lambda: SwapBuy(op[1], op[2]),
              "sell": lambda: SwapSell(op[1], op[2]), "noop": NoOp,
              "malformed": lambda: Malformed(b"\x09zz")}[kind]()
    return Transaction(1, sender, action, gas_limit, price)


@settings(max_examples=400, deadline=None)
@given(st.lists(st.tuples(ops, st.integers(1, 4), st.integers(1, 150), st.integers(0, 5)), max_size=6),
       st.booleans())
def test_execute_agrees_with_oracle_and_conserves(seq, bug):
    s = State({Key.account(1): 2000, Key.account(2): 500, Key.account(3): 50,
               Key.reserve(1, 0): 4000, Key.reserve(1, 1): 3000, Key.slot(1, 2): 700})
    ref = to_oracle(s)
    sem = Semantics(bugs={"unchecked_sell"} if bug else set())
    totals = token_totals(s)
    for op, sender, gl, price in seq:
        t = make(op, sender, gl, price)
        out = sem(t, s)
        ref, status = oracles.step(ref, sender, op, gl, price, unchecked_sell=bug)
        assert to_oracle(out.new_state) == ref
        assert out.status.value.removeprefix("gas_") == status
        assert out.gas_used <= t.gas_limit
        if not bug:
            assert token_totals(out.new_state)["numeraire"] == totals["numeraire"]
            assert token_totals(out.new_state) == totals
        if out.status is Status.ABORTED:
            touched = {k for k in set(s.keys()) | set(out.new_state.keys()) if s[k] != out.new_state[k]}
            assert touched <= {Key.account(sender), Key.account(FEE_SINK)}
            assert call_component(t, s, unchecked_sell=bug).state is s
        s = out.new_state


def test_wft_checks():
    t = Transaction(1, 1, Malformed(b"\xff\xfe"), 10, 2)
    assert check_wft(t.with_(signed=False), 100, 1) is Wft.NO_SIGNATURE
    assert check_wft(t, 5, 5) is Wft.WELL_FORMED
    assert check_wft(t, 4, 5) is Wft.INSUFFICIENT_POSTING_FEE
    assert check_wft(t, 5, 5, strict_gas_check=True) is Wft.INSUFFICIENT_GAS_COVER
    assert check_wft(t, 25, 5, strict_gas_check=True).ok


@given(st.one_of(st.builds(Transfer, st.integers(0, 2**64 - 1), st.integers(0, 2**128 - 1)),
                 st.builds(SwapBuy, st.integers(0, 2**64 - 1), st.integers(0, 2**128 - 1)),
                 st.builds(SwapSell, st.integers(0, 2**64 - 1), st.integers(0, 2**128 - 1)),
                 st.just(NoOp())),
       st.integers(0, 2**64 - 1), st.integers(1, 2**64 - 1), st.integers(0, 2**100), st.booleans())
def test_transaction_codec_roundtrip(action, sender, gl, price, signed):
    t = Transaction(7, sender, action, gl, price, signed, 3)
    assert decode_action(encode_action(action)) == action
    assert decode_transaction(encode_transaction(t)) == t


def test_malformed_must_not_decode():
    with pytest.raises(ValueError):
        Malformed(b"\x04")
    assert isinstance(decode_action(b""), Malformed)


def test_transaction_validation():
    with pytest.raises(ValueError):
        Transaction(1, 1, NoOp(), 0, 1)
    with pytest.raises(ValueError):
        Transaction(1, 1, NoOp(), 1, -1)


def test_cost_table_config():
    c = CostTable.from_config({"transfer": 30})
    assert c.cost(Transfer(1, 1)) == 30 and c.cost(NoOp()) == DEFAULT_COSTS.noop
    with pytest.raises(ValueError):
        CostTable.from_config({"bogus": 1})


def test_worst_case_debit():
    assert worst_case_debit(Transaction(1, 1, Transfer(2, 40), 10, 2)) == 60
    assert worst_case_debit(Transaction(1, 1, SwapSell(1, 40), 10, 2)) == 20
