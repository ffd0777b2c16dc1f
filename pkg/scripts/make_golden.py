#!/usr/bin/env python3
"""Regenerate the committed protocol fixtures: a small deterministic VAE
checkpoint, a recorded sensor stream, and the golden reply transcript."""

import sys
import threading
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from latentik import protocol
from latentik.dataset import PoseDataset
from latentik.motion import make_sparse
from latentik.optimizer import OptimizerConfig
from latentik.service import SessionService, replay_stream
from latentik.skeleton import DEFAULT_ROLES
from latentik.synth import synth_motion
from latentik.vae import PoseVae, train_vae


def main():
    fixture_dir = ROOT / "tests" / "data"
    transcript_dir = ROOT / "docs" / "transcripts"
    fixture_dir.mkdir(parents=True, exist_ok=True)
    transcript_dir.mkdir(parents=True, exist_ok=True)

    ckpt = fixture_dir / "fixture_vae.ckpt"
    clips = [
        synth_motion("walk_cycle", 8.0, seed=0),
        synth_motion("walk_cycle", 8.0, seed=10),
        synth_motion("arm_wave", 8.0, seed=1),
        synth_motion("arm_wave", 8.0, seed=11),
        synth_motion("squat", 8.0, seed=2),
        synth_motion("pushup_like", 6.0, seed=3),
    ]
    model, _ = train_vae(PoseDataset(clips), epochs=16, seed=0)
    model.save(ckpt)
    print(f"wrote {ckpt}")

    clip = synth_motion("walk_cycle", 0.5, seed=9)
    roles = list(DEFAULT_ROLES)
    stream = make_sparse(clip, roles)
    header = protocol.stream_header(
        clip.skeleton, roles, "pos_rot", clip.frame_rate, clip.initial_root, clip.pose(0)
    )
    frames = [protocol.sparse_frame_message(i, s) for i, s in enumerate(stream)]
    # drop a foot sensor mid-stream, then drag the left hand upward
    edit_remove = {"type": "constraint_edit",
                   "remove": ["ee_pos:left_foot", "ee_rot:left_foot"]}
    lifted = protocol.sparse_frame_message(len(frames), stream[-1])
    for sig in lifted["signals"]:
        if sig["role"] == "left_hand":
            sig["pos"][1] += 0.10
    messages = frames[:10] + [edit_remove] + frames[10:20] + [lifted]

    protocol.write_stream(transcript_dir / "session_input.jsonl", header, [])
    with (transcript_dir / "session_input.jsonl").open("w") as fh:
        fh.write(protocol.encode_message(header))
        for m in messages:
            fh.write(protocol.encode_message(m))

    vae = PoseVae.load(ckpt)
    svc = SessionService(("127.0.0.1", 0), vae, config=OptimizerConfig.for_mode("realtime"))
    thread = threading.Thread(target=svc.serve_forever, daemon=True)
    thread.start()
    try:
        replies = replay_stream("127.0.0.1", svc.port, header, messages)
    finally:
        svc.shutdown()
        svc.server_close()

    with (transcript_dir / "session_golden.jsonl").open("w") as fh:
        for msg in replies:
            msg = {k: v for k, v in msg.items() if k != "seq"}
            fh.write(protocol.encode_message(msg))
    print(f"wrote {transcript_dir}/session_input.jsonl and session_golden.jsonl "
          f"({len(replies)} replies)")


if __name__ == "__main__":
    main()
