import random

import pytest

from fluxsim.core.errors import ConfigError, DecodeError, EncodingError, ValidationError
from fluxsim.core.protocol import (
    DCR,
    RCIPB,
    RGR,
    SRR,
    Command,
    CommandKind,
    NothingForYou,
    PublishCommand,
    RCAd,
    SmsTemplateTable,
    SpamSms,
    Upload,
    UploadAck,
    b64_text,
    decode,
    decode_params,
    encode,
    encode_params,
    load_templates,
    make_unique_id,
    parse_unique_id,
    sms_decode,
    sms_encode,
    template_hash,
)
from fluxsim.core.rng import XorShift64Star

SAMPLES = [
    SRR("dev001", {"ip": "10.0.0.5", "profile": "auto_grant"}),
    RGR("dev001", 7),
    DCR(7, "10.0.0.5"),
    Command(CommandKind.RECORD_AUDIO, 1800000, {"time": "30"}, "10.0.0.2"),
    NothingForYou(),
    RCIPB(7, "10.0.0.9"),
    RCAd("10.0.0.12"),
    PublishCommand(((1, "10.0.0.5"), (2, "10.0.0.6")), CommandKind.GRAB_GPS_LOCATION, {}, 1800000),
    Upload(7, "dev001-1800000", 128, False),
    UploadAck("dev001-1800000"),
    SpamSms("Win a prize"),
]


@pytest.mark.parametrize("msg", SAMPLES, ids=lambda m: type(m).__name__)
def test_frames_decode_to_the_same_message(msg):
    assert decode(encode(msg)) == msg


TEXT_CHARS = "abcXYZ019 .-|=\"\\\n\u00e9\u4e2d\U0001f600"


def random_text(rnd):
    return "".join(rnd.choice(TEXT_CHARS) for _ in range(rnd.randrange(0, 24)))


def random_map(rnd):
    return {random_text(rnd): random_text(rnd) for _ in range(rnd.randrange(0, 4))}


def random_message(rnd):
    n = lambda: rnd.randrange(0, 2**53)
    kind = rnd.choice(list(CommandKind))
    return rnd.choice([
        lambda: SRR(random_text(rnd), random_map(rnd)),
        lambda: RGR(random_text(rnd), n()),
        lambda: DCR(n(), random_text(rnd)),
        lambda: Command(kind, n(), random_map(rnd), random_text(rnd)),
        lambda: NothingForYou(),
        lambda: RCIPB(n(), random_text(rnd)),
        lambda: RCAd(random_text(rnd)),
        lambda: PublishCommand(tuple((n(), random_text(rnd)) for _ in range(rnd.randrange(0, 4))), kind, random_map(rnd), n()),
        lambda: Upload(n(), random_text(rnd), n(), rnd.random() < 0.5),
        lambda: UploadAck(random_text(rnd)),
        lambda: SpamSms(random_text(rnd)),
    ])()


def test_random_messages_survive_the_wire():
    rnd = random.Random(5)
    for _ in range(2000):
        msg = random_message(rnd)
        assert decode(encode(msg)) == msg


def test_decode_is_total_on_damaged_frames():
    rnd = random.Random(6)
    outcomes = {"decoded": 0, "rejected": 0}
    for _ in range(3000):
        frame = bytearray(encode(random_message(rnd)))
        for _ in range(rnd.randrange(1, 4)):
            frame[rnd.randrange(len(frame))] = rnd.randrange(256)
        if rnd.random() < 0.2:
            frame = bytearray(rnd.randbytes(rnd.randrange(0, 40)))
        try:
            decoded = decode(bytes(frame))
        except DecodeError as e:
            assert 0 <= e.offset <= len(frame)
            outcomes["rejected"] += 1
        else:
            assert type(decoded).TAG == frame[0]
            outcomes["decoded"] += 1
    assert outcomes["rejected"] > 0
    assert outcomes["decoded"] > 0


def test_frame_header_layout():
    frame = encode(DCR(3, "10.0.0.1"))
    assert frame[0] == DCR.TAG
    assert int.from_bytes(frame[1:5], "big") == len(frame) - 5


def test_fieldless_message_has_empty_body():
    assert encode(NothingForYou()) == bytes([NothingForYou.TAG, 0, 0, 0, 0])


def test_body_is_canonical_json():
    frame = encode(DCR(3, "10.0.0.1"))
    assert frame[5:] == b'{"bot_id":3,"bot_ip":"10.0.0.1"}'


def test_decode_rejects_unknown_tag():
    with pytest.raises(DecodeError) as e:
        decode(bytes([99, 0, 0, 0, 0]))
    assert e.value.offset == 0


def test_decode_rejects_truncated_body():
    frame = encode(RGR("dev001", 1))
    with pytest.raises(DecodeError):
        decode(frame[:-3])


def test_decode_rejects_trailing_bytes():
    with pytest.raises(DecodeError):
        decode(encode(RGR("dev001", 1)) + b"x")


def test_decode_rejects_wrong_field_type():
    body = b'{"bot_id":"3","bot_ip":"10.0.0.1"}'
    frame = bytes([DCR.TAG]) + len(body).to_bytes(4, "big") + body
    with pytest.raises(DecodeError):
        decode(frame)


def test_decode_rejects_missing_field():
    body = b'{"bot_id":3}'
    frame = bytes([DCR.TAG]) + len(body).to_bytes(4, "big") + body
    with pytest.raises(DecodeError):
        decode(frame)


def test_publish_targets_are_tuples():
    msg = PublishCommand([[1, "10.0.0.5"]], CommandKind.CAPTURE_IMAGE, {}, 5)
    assert msg.targets == ((1, "10.0.0.5"),)


# --- unique ids -------------------------------------------------------------

def test_unique_id_round_trip():
    uid = make_unique_id("dev042", 1800000)
    assert uid == "dev042-1800000"
    assert parse_unique_id(uid) == ("dev042", 1800000)


def test_unique_id_rejects_separator_in_device_id():
    with pytest.raises(ValidationError):
        make_unique_id("dev-42", 1)


def test_parse_unique_id_rejects_garbage():
    with pytest.raises(ValidationError):
        parse_unique_id("dev042")


# --- SMS channel ------------------------------------------------------------

def test_base64_of_bare_address():
    assert b64_text("192.168.72.3") == "MTkyLjE2OC43Mi4z"


def test_param_encoding():
    assert encode_params({"ip": "192.168.72.3"}) == "ip=192.168.72.3"
    assert b64_text(encode_params({"ip": "192.168.72.3"})) == "aXA9MTkyLjE2OC43Mi4z"
    assert encode_params({"time": "30", "ip": "1.2.3.4"}) == "ip=1.2.3.4;time=30"
    assert decode_params("ip=1.2.3.4;time=30") == {"ip": "1.2.3.4", "time": "30"}


def test_param_encoding_rejects_separators():
    with pytest.raises(ValidationError):
        encode_params({"a": "x;y"})


def test_template_hash_ignores_case_spacing_and_slot():
    assert template_hash("Claim  code {P} NOW") == template_hash("claim code now")


def test_default_table_covers_every_command():
    table = load_templates()
    for kind in CommandKind:
        assert table.templates_for(kind)


@pytest.mark.parametrize("kind", list(CommandKind))
def test_sms_round_trip(kind):
    table = load_templates()
    rng = XorShift64Star(9)
    params = {"ip": "192.168.72.3", "time": "30"}
    sms = sms_encode(kind, params, table, rng)
    assert len(sms.template_text) <= 160
    assert sms_decode(sms, table) == (kind, params)


def test_sms_without_params():
    table = SmsTemplateTable()
    table.add("Your parcel {P} is waiting", CommandKind.CAPTURE_IMAGE)
    sms = sms_encode(CommandKind.CAPTURE_IMAGE, {}, table, XorShift64Star(1))
    assert sms_decode(sms, table) == (CommandKind.CAPTURE_IMAGE, {})


def test_ordinary_spam_is_not_for_us():
    assert sms_decode(SpamSms("Cheap watches, best prices, click now"), load_templates()) is None


def test_bad_slot_is_a_decode_error():
    table = SmsTemplateTable()
    table.add("Your parcel {P} is waiting", CommandKind.CAPTURE_IMAGE)
    with pytest.raises(DecodeError):
        sms_decode(SpamSms("Your parcel !!!notbase64 is waiting"), table)


def test_sms_length_limit():
    table = SmsTemplateTable()
    table.add("x {P}", CommandKind.CAPTURE_IMAGE)
    with pytest.raises(EncodingError):
        sms_encode(CommandKind.CAPTURE_IMAGE, {"blob": "a" * 200}, table, XorShift64Star(1))


def test_no_template_for_kind():
    table = SmsTemplateTable()
    table.add("x {P}", CommandKind.CAPTURE_IMAGE)
    with pytest.raises(EncodingError):
        sms_encode(CommandKind.RECORD_AUDIO, {}, table, XorShift64Star(1))


def test_conflicting_template_is_rejected():
    table = SmsTemplateTable()
    table.add("Claim code {P} now", CommandKind.CAPTURE_IMAGE)
    with pytest.raises(ConfigError):
        table.add("claim   CODE now {P}", CommandKind.RECORD_AUDIO)


def test_template_needs_standalone_slot():
    table = SmsTemplateTable()
    with pytest.raises(ConfigError):
        table.add("code:{P}", CommandKind.CAPTURE_IMAGE)


def test_table_parse_reports_line(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("# header\nNOT_A_KIND\tsome {P} text\n")
    with pytest.raises(ConfigError) as e:
        SmsTemplateTable.load(str(path))
    assert e.value.path.endswith(":2")
