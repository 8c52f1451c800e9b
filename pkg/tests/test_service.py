import asyncio
import json

import numpy as np
import pytest

from predsim import service, trace
from predsim.predict import NoPrediction, poly
from predsim.service import ChannelConfig, SessionChannel, parse_hello_predictor


def scripted_channel(predictor=None, env=None):
    cfg = ChannelConfig(predictor=predictor or NoPrediction(), inject_oneway_ms=0.0, env=env)
    return SessionChannel(cfg)


def feed_constant_velocity(channel, n, vel=(1.0, 0.0, 0.0), dt=11.0, lag_ms=50.0):
    """Deliver n samples; sample k captured at k*dt arrives lag_ms later."""
    tpl = trace.default_template()
    vel = np.asarray(vel)
    for k in range(n):
        t = k * dt
        channel.deliver_input(t + lag_ms, seq=k, t_client_ms=t, points=tpl.rest_points + vel * t)


class ScriptedStream:
    """Constant-velocity sample stream delivered in arrival order, the way
    the socket layer would drive the channel."""

    def __init__(self, channel, vel=(1.0, 0.0, 0.0), dt=11.0, lag_ms=50.0):
        self.channel = channel
        self.tpl = trace.default_template()
        self.vel = np.asarray(vel, dtype=float)
        self.dt = dt
        self.lag_ms = lag_ms
        self.next_k = 0

    def points_at(self, t_ms):
        return self.tpl.rest_points + self.vel * t_ms

    def advance_to(self, t_server_ms):
        while self.next_k * self.dt + self.lag_ms <= t_server_ms:
            k = self.next_k
            t = k * self.dt
            self.channel.deliver_input(t + self.lag_ms, seq=k, t_client_ms=t, points=self.points_at(t))
            self.next_k += 1


def test_sessions_are_isolated_and_deterministic():
    a = scripted_channel(poly(2, 20))
    b = scripted_channel(poly(2, 20))
    for ch in (a, b):
        feed_constant_velocity(ch, 40)
    ta = [a.tick(500.0 + i * 7.519) for i in range(10)]
    tb = [b.tick(500.0 + i * 7.519) for i in range(10)]
    assert ta == tb  # byte-identical state streams


def test_state_contains_both_hands_and_acks():
    ch = scripted_channel()
    feed_constant_velocity(ch, 10)
    state = ch.tick(200.0)
    assert state["type"] == "state"
    assert state["ack_seq"] == 9
    assert len(state["hand_pred"]) == 50 and len(state["hand_raw"]) == 50
    # No prediction: both hands identical, and equal to a delivered sample.
    assert state["hand_pred"] == state["hand_raw"]


def test_raw_hand_trails_by_total_delay():
    # Constant velocity 1 mm/ms, uplink lag 50 ms: at tick time T the newest
    # delivered sample is ~(50 + sample age) old, so the raw hand trails the
    # true position by about that staleness times the speed.
    ch = scripted_channel()
    stream = ScriptedStream(ch, lag_ms=50.0)
    trails = []
    for i in range(40):
        T = 800.0 + i * 7.519
        stream.advance_to(T)
        state = ch.tick(T)
        raw_x = state["hand_raw"][0][0]
        true_x = stream.points_at(T)[0, 0]
        trails.append(true_x - raw_x)
    mean_trail = np.mean(trails)
    assert 50.0 <= mean_trail <= 50.0 + 11.0 + 1.0


def test_predicted_hand_beats_raw_on_most_ticks():
    ch = scripted_channel(poly(2, 20))
    lag = 50.0
    ch.rtt_ewma_ms = 2 * lag  # as the ping chain would converge to
    stream = ScriptedStream(ch, lag_ms=lag)
    better = 0
    total = 0
    for i in range(150):
        T = 900.0 + i * 7.519
        stream.advance_to(T)
        state = ch.tick(T)
        # Live hand when the state lands after the downlink leg.
        live = stream.points_at(T + lag)
        raw_err = np.linalg.norm(np.array(state["hand_raw"]) - live, axis=1).mean()
        pred_err = np.linalg.norm(np.array(state["hand_pred"]) - live, axis=1).mean()
        total += 1
        better += pred_err < raw_err
    assert better / total >= 0.9


def test_ping_chain_rtt_converges():
    ch = scripted_channel()
    now = 0.0
    rtt = 20.0
    first = ch.on_ping(now, t_client_ms=123.456)
    assert first == {"type": "pong", "t_ms": 123.456, "t_server_ms": 0.0}
    ch.mark_pong_sent(now)
    for _ in range(50):
        now += rtt  # client pings back one round trip after each pong
        ch.on_ping(now, t_client_ms=0.0)
        ch.mark_pong_sent(now)
    assert ch.rtt_ewma_ms == pytest.approx(rtt, abs=1.0)


def test_rtt_ignores_client_clock():
    a = scripted_channel()
    b = scripted_channel()
    now = 0.0
    for _ in range(20):
        a.on_ping(now, t_client_ms=now)
        a.mark_pong_sent(now)
        b.on_ping(now, t_client_ms=now + 9.9e8)  # wildly skewed client clock
        b.mark_pong_sent(now)
        now += 25.0
    assert a.rtt_ewma_ms == b.rtt_ewma_ms


def test_stale_and_bad_inputs():
    ch = scripted_channel()
    tpl = trace.default_template()
    ch.deliver_input(10.0, seq=5, t_client_ms=5.0, points=tpl.rest_points)
    ch.deliver_input(12.0, seq=4, t_client_ms=7.0, points=tpl.rest_points + 1.0)  # replay
    assert ch.last_seq == 5 and len(ch.times) == 1
    with pytest.raises(service.ProtocolError):
        ch.deliver_input(14.0, seq=6, t_client_ms=9.0, points=[[0, 0, 0]] * 49)


def test_parse_hello_predictor():
    kind = parse_hello_predictor({"kind": "poly", "order": 2, "window": 20})
    assert kind.spec.order == 2 and kind.spec.window == 20
    assert isinstance(parse_hello_predictor({"kind": "none"}), NoPrediction)
    with pytest.raises(service.ProtocolError):
        parse_hello_predictor({"kind": "quantum"})


# --- socket-level integration ---------------------------------------------------


async def _ws_roundtrip():
    import websockets

    ready = asyncio.Event()
    port = 8991
    server = asyncio.create_task(service.run_server(port, {"env_particles": 50}, ready))
    await asyncio.wait_for(ready.wait(), 5)
    tpl = trace.default_template()
    try:
        async with websockets.connect(f"ws://127.0.0.1:{port}") as ws:
            await ws.send(
                json.dumps(
                    {
                        "type": "hello",
                        "predictor": {"kind": "poly", "order": 2, "window": 20},
                        "inject_oneway_ms": 10,
                        "seed": 1,
                    }
                )
            )
            # malformed frame: error reply, connection stays up
            await ws.send(json.dumps({"type": "input", "seq": 0}))
            # a short scripted stream
            for k in range(40):
                pts = (tpl.rest_points + np.array([1.0, 0, 0]) * k * 11.0).tolist()
                await ws.send(json.dumps({"type": "input", "seq": k + 1, "t_ms": k * 11.0, "points": pts}))
                if k % 10 == 0:
                    await ws.send(json.dumps({"type": "ping", "t_ms": k * 1.0}))
                await asyncio.sleep(0.011)
            got_state, got_pong, got_error = None, None, None
            for _ in range(200):
                msg = json.loads(await asyncio.wait_for(ws.recv(), 5))
                if msg["type"] == "state" and msg["ack_seq"] >= 1:
                    got_state = got_state or msg
                elif msg["type"] == "pong":
                    got_pong = got_pong or msg
                elif msg["type"] == "error":
                    got_error = got_error or msg
                if got_state and got_pong and got_error:
                    break
            return got_state, got_pong, got_error
    finally:
        server.cancel()


def test_websocket_integration():
    state, pong, error = asyncio.run(_ws_roundtrip())
    assert error is not None and error["code"] == "bad_input"
    assert pong is not None and "t_server_ms" in pong
    assert state is not None
    assert len(state["hand_raw"]) == 50 and len(state["hand_pred"]) == 50
    assert state["horizon_ms"] >= 0
    assert len(state["env"]) == 50


def test_backpressure_drops_oldest():
    conn = service._Connection(ws=None, service_config={})
    for i in range(12):
        conn.outbound.append(({"type": "state", "ack_seq": i}, False))
    assert len(conn.outbound) == service.OUTBOUND_QUEUE_LIMIT
    head, _ = conn.outbound[0]
    assert head["ack_seq"] == 4  # the four oldest were dropped
