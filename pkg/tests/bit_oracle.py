"""Reference signal extraction by slicing a rendered bit string.

Deliberately shares no code with canids.codec.
"""


def payload_bits_lsb_first(payload: bytes) -> str:
    # character i is bit (i % 8) of byte (i // 8), least significant bit first
    return "".join(format(b, "08b")[::-1] for b in payload)


def payload_bits_msb_first(payload: bytes) -> str:
    return "".join(format(b, "08b") for b in payload)


def oracle_extract(payload: bytes, start_bit: int, length: int, byte_order: str, value_type: str) -> int:
    if byte_order == "little_endian":
        field = payload_bits_lsb_first(payload)[start_bit:start_bit + length][::-1]
    else:
        # sawtooth numbering: locate the MSB in an MSB-first stream of the bytes
        byte, bit = divmod(start_bit, 8)
        pos = byte * 8 + (7 - bit)
        field = payload_bits_msb_first(payload)[pos:pos + length]
    assert len(field) == length, "layout runs past the payload"
    value = int(field, 2)
    if value_type == "signed" and field[0] == "1":
        value -= 1 << length
    return value
