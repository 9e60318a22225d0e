"""Scripted sandbox worker for pool tests.

The candidate code picks the behavior:
  SLEEP              never answers
  CRASH              exits without answering
  CRASH_ONCE:<path>  exits the first time (creating <path>), answers after
  KEYERROR           fails with a KeyError
  SYNTAX             reports a syntax error
  NOTHING            succeeds without outputs
  anything else      succeeds with a scalar holding the code length
"""
import argparse
import hashlib
import json
import os
import sys
import time

parser = argparse.ArgumentParser()
parser.add_argument("--protocol-version", type=int, required=True)
parser.add_argument("--claim-version", type=int)
args = parser.parse_args()

version = args.claim_version if args.claim_version is not None else args.protocol_version


def send(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def scalar(name, value):
    digest = hashlib.sha256(("i:%d" % value).encode()).hexdigest()
    return {"name": name, "type_name": "int", "kind": "scalar", "rendered": str(value),
            "cells": [[value]], "digest": digest}


send({"kind": "handshake", "protocol_version": version, "worker": "stub"})

for line in sys.stdin:
    msg = json.loads(line)
    if msg["kind"] == "shutdown":
        break
    code = msg["candidate_code"]
    rid = msg["request_id"]
    if code == "SLEEP":
        time.sleep(30)
    if code == "CRASH":
        os._exit(3)
    if code.startswith("CRASH_ONCE:"):
        path = code.split(":", 1)[1]
        if not os.path.exists(path):
            open(path, "w").close()
            os._exit(3)
    if code == "KEYERROR":
        send({"kind": "result", "request_id": rid, "outcome": "error",
              "error_type": "KeyError", "error_message": "'missing'", "duration_ms": 1})
    elif code == "SYNTAX":
        send({"kind": "result", "request_id": rid, "outcome": "syntax_error",
              "error_type": "SyntaxError", "error_message": "invalid syntax"})
    elif code == "NOTHING":
        send({"kind": "result", "request_id": rid, "outcome": "ok"})
    else:
        send({"kind": "result", "request_id": rid, "outcome": "ok",
              "output_vars": [scalar("__output__", len(code))],
              "api_calls": ["df.head"], "duration_ms": 2})
