from amqc.telemetry.broker import Broker, Session
from amqc.telemetry.client import Client, Message, connect_inprocess
from amqc.telemetry.frames import (
    Connack,
    Connect,
    Disconnect,
    FrameReader,
    Pingreq,
    Pingresp,
    Puback,
    Publish,
    Suback,
    Subscribe,
    decode_packet,
    encode_packet,
    split_frame,
)
from amqc.telemetry.link import DropInjector
from amqc.telemetry.record import (
    RECORD_SIZE,
    DefectRecord,
    decode_record,
    encode_record,
    parse_record_json,
    record_json,
)
from amqc.telemetry.topics import control_topic, defects_topic, layers_topic
from amqc.telemetry.varint import VARINT_MAX, decode_varint, encode_varint
