"""Stream simulated frames through a classifier and receive predictions over UDP loopback.

Run: python demos/04_stream_loopback.py
"""
import socket
import threading

import numpy as np

from mmgesture.pipeline import Pipeline, featurize
from mmgesture.recognize import TrainConfig, train_classifier
from mmgesture.scene import DEFAULT_POSITIONS, DatasetSpec, generate_instances
from mmgesture.service import StreamConfig, receive_messages, serve_stream

NAMES = ["push", "pull", "swipe-left", "swipe-right", "circle"]

spec = DatasetSpec({k: DEFAULT_POSITIONS[k] for k in ("P1", "P3", "P4")}, repetitions=10, seed=0)
pairs = list(generate_instances(spec))
pipe = Pipeline()
data = featurize(pairs, pipe)
train = np.isin(data.positions, ["P1", "P3"])
print(f"training on {train.sum()} frontal instances ...")
net = train_classifier(data.x[train], data.labels[train], TrainConfig(epochs=30, seed=0))

# one gesture of each class at the unseen oblique placement, played back to back
clips = [next(i for r, i in pairs if r["position"] == "P4" and r["label"] == c and r["id"].endswith("r004"))
         for c in range(5)]
frames = [f for clip in clips for f in clip.frames]
n = len(clips[0].frames)

rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
rx.bind(("127.0.0.1", 0))
cfg = StreamConfig(window_frames=n, hop_frames=n, port=rx.getsockname()[1], queue_capacity=64)
got = []
listener = threading.Thread(target=lambda: got.extend(receive_messages(rx, count=5, timeout=5)))
listener.start()
stats = serve_stream(iter(frames), net, pipe, cfg)
listener.join()
rx.close()

for msg, clip in zip(got, clips):
    print(f"seq {msg.sequence}: predicted {NAMES[msg.label]:11s} ({msg.confidence:.2f})  "
          f"true {NAMES[clip.label]}")
print(f"windows {stats.windows}, sent {stats.sent}, mean latency "
      f"{1e3 * np.mean(stats.latencies):.1f} ms")
