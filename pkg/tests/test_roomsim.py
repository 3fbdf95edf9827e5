import itertools

import numpy as np
import pytest

from rirbench.acoustics import rt60
from rirbench.audio import ImpulseResponse
from rirbench.errors import ValidationError
from rirbench.roomsim import (
    ABSORPTION_CLASSES,
    ShoeboxRoom,
    baseline_generate,
    count_images,
    eyring_rt60,
    parse_structured_prompt,
    sabine_rt60,
    simulate_shoebox,
)

FS = 16000

# spread positions avoid loading the axial modes that a uniform box
# over-weights when source and receiver sit at rational fractions
SRC = (2.71, 1.43, 1.97)
RCV = (3.47, 3.73, 0.79)


def pulse_amplitude(samples, rate, delay_s):
    """Unbiased amplitude of an isolated rendered pulse: sum over its support."""
    center = int(round(delay_s * rate))
    lo, hi = max(0, center - 24), min(len(samples), center + 25)
    return float(np.sum(samples[lo:hi]))


class TestRoomValidation:
    def test_invariants(self):
        with pytest.raises(ValidationError, match="dims"):
            ShoeboxRoom((0, 5, 3), (1, 1, 1), (2, 2, 2), 0.3, max_order=1)
        with pytest.raises(ValidationError, match="source"):
            ShoeboxRoom((6, 5, 3), (6, 1, 1), (2, 2, 2), 0.3, max_order=1)
        with pytest.raises(ValidationError, match="receiver"):
            ShoeboxRoom((6, 5, 3), (1, 1, 1), (2, 2, 7), 0.3, max_order=1)
        with pytest.raises(ValidationError, match="differ"):
            ShoeboxRoom((6, 5, 3), (1, 1, 1), (1, 1, 1), 0.3, max_order=1)
        with pytest.raises(ValidationError, match="absorption"):
            ShoeboxRoom((6, 5, 3), (1, 1, 1), (2, 2, 2), 0.0, max_order=1)
        with pytest.raises(ValidationError, match="max_order or max_time"):
            ShoeboxRoom((6, 5, 3), (1, 1, 1), (2, 2, 2), 0.3)

    def test_scalar_absorption_broadcast(self):
        room = ShoeboxRoom((6, 5, 3), (1, 1, 1), (2, 2, 2), 0.3, max_order=1)
        assert room.absorption == (0.3,) * 6


class TestPredictors:
    def test_sabine_hand_value(self):
        room = ShoeboxRoom((6, 5, 3), SRC, RCV, 0.3, max_order=1)
        # V=90, S=126, uniform alpha=0.3: 0.161*90/37.8
        assert abs(sabine_rt60(room) - 0.161 * 90 / 37.8) < 1e-12
        assert abs(sabine_rt60(room) - 0.3833) < 5e-4

    def test_eyring_hand_value(self):
        room = ShoeboxRoom((6, 5, 3), SRC, RCV, 0.3, max_order=1)
        expected = 0.161 * 90 / (-126 * np.log(0.7))
        assert abs(eyring_rt60(room) - expected) < 1e-12
        assert abs(eyring_rt60(room) - 0.322) < 1e-3

    def test_low_absorption_limit(self):
        room = ShoeboxRoom((6, 5, 3), SRC, RCV, 0.01, max_order=1)
        assert abs(eyring_rt60(room) / sabine_rt60(room) - 1.0) < 0.01

    def test_eyring_undefined_at_full_absorption(self):
        room = ShoeboxRoom((6, 5, 3), SRC, RCV, 1.0, max_order=1)
        with pytest.raises(ValidationError, match="Eyring"):
            eyring_rt60(room)


class TestSimulateShoebox:
    def test_free_field_direct_path(self):
        # fully absorbing walls leave only the direct path at d=2m
        room = ShoeboxRoom((6, 5, 3), (2, 2, 1.5), (2, 4, 1.5), 1.0, max_time=0.05)
        rir = simulate_shoebox(room, FS)
        expected_amp = 1.0 / (4 * np.pi * 2.0)
        expected_delay = 2.0 / 343.0

        peak_idx = int(np.argmax(np.abs(rir.samples)))
        assert abs(peak_idx - expected_delay * FS) <= 1.0

        # band-limited interpolated peak sits within 5% (kernel droop included)
        up = np.fft.irfft(np.fft.rfft(rir.samples), 16 * len(rir.samples)) * 16
        assert abs(np.max(np.abs(up)) - expected_amp) / expected_amp < 0.05
        assert abs(np.argmax(np.abs(up)) / 16.0 - expected_delay * FS) < 0.1

        # pulse sum is the unbiased amplitude estimate
        raw = simulate_shoebox(room, FS, highpass_hz=None)
        amp = pulse_amplitude(raw.samples, FS, expected_delay)
        assert abs(amp - expected_amp) / expected_amp < 0.02

    def test_max_order_zero_equals_fully_absorbing(self):
        kwargs = dict(dims=(6, 5, 3), source=(2, 2, 1.5), receiver=(2, 4, 1.5))
        r_zero = simulate_shoebox(ShoeboxRoom(**kwargs, absorption=0.3, max_order=0), FS)
        r_dead = simulate_shoebox(ShoeboxRoom(**kwargs, absorption=1.0, max_order=0), FS)
        n = min(len(r_zero), len(r_dead))
        assert np.max(np.abs(r_zero.samples[:n] - r_dead.samples[:n])) < 1e-12

    def test_rt60_tracks_eyring(self):
        room = ShoeboxRoom((6, 5, 3), SRC, RCV, 0.3, max_time=1.5)
        rir = simulate_shoebox(room, FS)
        measured = rt60(rir, method="T20").seconds
        predicted = eyring_rt60(room)
        assert abs(measured - predicted) / predicted < 0.25

    def test_direct_path_amplitude_follows_inverse_distance(self):
        for d in (0.5, 2.0, 5.0, 10.0):
            room = ShoeboxRoom(
                (24, 21, 12), (1.3, 1.7, 1.1), (1.3 + d, 1.7, 1.1), 1.0, max_time=(d + 4) / 343.0
            )
            rir = simulate_shoebox(room, FS, highpass_hz=None)
            amp = pulse_amplitude(rir.samples, FS, d / 343.0)
            expected = 1.0 / (4 * np.pi * d)
            assert abs(amp - expected) / expected < 0.02

    def test_reciprocity(self):
        a = simulate_shoebox(ShoeboxRoom((4, 3, 2.5), (1, 1, 1), (3, 2, 1.5), 0.3, max_order=8), FS)
        b = simulate_shoebox(ShoeboxRoom((4, 3, 2.5), (3, 2, 1.5), (1, 1, 1), 0.3, max_order=8), FS)
        assert np.max(np.abs(a.samples - b.samples)) < 1e-6

    def test_energy_monotone_in_absorption(self):
        energies = []
        for alpha in (0.1, 0.3, 0.6):
            room = ShoeboxRoom((6, 5, 3), SRC, RCV, alpha, max_time=0.5)
            rir = simulate_shoebox(room, FS)
            direct_end = int(np.linalg.norm(np.subtract(SRC, RCV)) / 343.0 * FS) + 40
            energies.append(float(np.sum(rir.samples[direct_end:] ** 2)))
        assert energies[0] > energies[1] > energies[2]

    def test_image_count_matches_brute_force(self):
        for order in range(4):
            room = ShoeboxRoom((6, 5, 3), SRC, RCV, 0.3, max_order=order)
            count = 0
            for qx, qy, qz in itertools.product((0, 1), repeat=3):
                for nx in range(-order - 1, order + 2):
                    for ny in range(-order - 1, order + 2):
                        for nz in range(-order - 1, order + 2):
                            total = (
                                abs(nx - qx) + abs(nx) + abs(ny - qy) + abs(ny)
                                + abs(nz - qz) + abs(nz)
                            )
                            if total <= order:
                                count += 1
            assert count_images(room) == count

    def test_axis_positions_count(self):
        # orders 0..N along one axis give exactly 2N+1 image positions
        from rirbench.roomsim import _axis_images

        for order in range(5):
            _, _, orders = _axis_images(2.0, 4.0, 6.0, 0.8, 0.8, order + 1)
            assert int(np.count_nonzero(orders <= order)) == 2 * order + 1

    def test_determinism(self):
        room = ShoeboxRoom((4, 3, 2.5), (1, 1, 1), (3, 2, 1.5), 0.3, max_order=6)
        a = simulate_shoebox(room, FS)
        b = simulate_shoebox(room, FS)
        assert np.array_equal(a.samples, b.samples)


class TestPromptParsing:
    def test_basic_prompt(self):
        parsed = parse_structured_prompt("room 6 by 5 by 3 meters, moderate absorption")
        assert parsed["dims"] == (6.0, 5.0, 3.0)
        assert parsed["alpha"] == 0.25

    def test_class_precedence(self):
        assert parse_structured_prompt("room 4 x 3 x 2.5, very absorptive walls")["alpha"] == 0.6
        assert parse_structured_prompt("room 4 x 3 x 2.5, very reflective")["alpha"] == 0.05
        assert parse_structured_prompt("room 4 x 3 x 2.5, reflective")["alpha"] == 0.1

    def test_positions(self):
        parsed = parse_structured_prompt(
            "room 6 by 5 by 3 meters, moderate absorption, source at 1, 2, 1.5, receiver at 4.5, 3, 1.2"
        )
        assert parsed["source"] == (1.0, 2.0, 1.5)
        assert parsed["receiver"] == (4.5, 3.0, 1.2)

    def test_unparseable_lists_grammar(self):
        with pytest.raises(ValidationError, match="by"):
            parse_structured_prompt("a lovely sunset")

    def test_all_classes_mapped(self):
        assert ABSORPTION_CLASSES == {
            "very absorptive": 0.6,
            "absorptive": 0.4,
            "moderate": 0.25,
            "reflective": 0.1,
            "very reflective": 0.05,
        }


class TestBaselineGenerate:
    def test_rt60_near_eyring(self):
        rir, meta = baseline_generate("room 6 by 5 by 3 meters, moderate absorption")
        measured = rt60(rir, method="T20").seconds
        assert abs(measured - meta["eyring_rt60_s"]) / meta["eyring_rt60_s"] < 0.30

    def test_deterministic(self):
        a, _ = baseline_generate("room 4 by 3 by 2.5 meters, absorptive", seed=7)
        b, _ = baseline_generate("room 4 by 3 by 2.5 meters, absorptive", seed=7)
        assert np.array_equal(a.samples, b.samples)

    def test_metadata_records_room(self):
        _, meta = baseline_generate("room 6 by 5 by 3 meters, moderate absorption")
        assert meta["room"]["dims"] == [6.0, 5.0, 3.0]
        assert np.allclose(meta["room"]["source"], [2.0, 5.0 / 3.0, 1.0])
        assert meta["absorption_class"] == "moderate"
        assert abs(meta["room"]["max_time_s"] - 3.0 * meta["sabine_rt60_s"]) < 1e-9

    def test_explicit_positions_override_defaults(self):
        _, meta = baseline_generate(
            "room 6 by 5 by 3 meters, moderate absorption, source at 1, 2, 1.5, receiver at 4.5, 3, 1.2"
        )
        assert meta["room"]["source"] == [1.0, 2.0, 1.5]
        assert meta["room"]["receiver"] == [4.5, 3.0, 1.2]

    def test_parse_error_propagates(self):
        with pytest.raises(ValidationError):
            baseline_generate("a lovely sunset")


class TestGeneratorEndpoints:
    def test_generator_from_spec(self):
        from rirbench.roomsim import HttpGenerator, IsmGenerator, generator_from_spec

        assert isinstance(generator_from_spec("ism"), IsmGenerator)
        assert isinstance(generator_from_spec("http://host/gen"), HttpGenerator)
        with pytest.raises(ValidationError):
            generator_from_spec("carrier-pigeon")

    def test_generate_wire_format(self):
        import json

        from fastapi.testclient import TestClient

        from rirbench.roomsim import METADATA_HEADER, make_generator_app

        client = TestClient(make_generator_app())
        resp = client.post("/generate", json={
            "prompt": "room 4 by 3 by 2.5 meters, absorptive", "sample_rate": 16000,
        })
        assert resp.status_code == 200
        assert resp.content[:4] == b"RIFF"
        meta = json.loads(resp.headers[METADATA_HEADER])
        assert meta["room"]["dims"] == [4.0, 3.0, 2.5]
        bad = client.post("/generate", json={"prompt": "a lovely sunset"})
        assert bad.status_code == 422

    def test_http_generator_client_round_trip(self):
        import http.server
        import json
        import threading

        from rirbench.audio import wav_bytes
        from rirbench.roomsim import METADATA_HEADER, HttpGenerator

        rir, meta = baseline_generate("room 4 by 3 by 2.5 meters, absorptive")
        payload, _ = wav_bytes(rir, "float32")

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                assert body["prompt"]
                self.send_response(200)
                self.send_header("Content-Type", "audio/wav")
                self.send_header(METADATA_HEADER, json.dumps({"generator": "stub"}))
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        server = http.server.HTTPServer(("127.0.0.1", 0), Handler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            client = HttpGenerator(f"http://127.0.0.1:{server.server_port}")
            got, got_meta = client.generate("room 4 by 3 by 2.5 meters, absorptive", sample_rate=16000)
            assert got_meta == {"generator": "stub"}
            assert got.sample_rate == rir.sample_rate
            assert np.allclose(got.samples, rir.samples, atol=1e-7)
        finally:
            server.shutdown()
