"""
The HTTP search service
=======================

The service wraps one immutable (checkpoint, index) snapshot behind three
endpoints: POST /api/query ranks the index and reports the parsed
difficulty tier, GET /api/image/{id} serves the pixels, GET /api/health
names the loaded snapshot. This demo drives the app in-process; `periosearch
serve` runs the same app under uvicorn.
"""

import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from periosearch import retrieval as rt
from periosearch import service as sv
from periosearch import synthdata as sd
from periosearch import training as tr

work = Path(tempfile.mkdtemp(prefix="periosearch_service_"))
sd.generate_corpus(work, n_patients=12, images_per_patient=(3, 4), seed=4)

config = tr.TrainConfig.desk(epochs=30)
tr.train(config, sd.Corpus(work), out_dir=work / "run")
rt.build_index(work / "run" / "model.ckpt", sd.Corpus(work), "train",
               base=work / "index")

client = TestClient(sv.create_app(sv.ServiceConfig(
    checkpoint=work / "run" / "model.ckpt",
    index_base=work / "index",
    data_dir=work,
)))

health = client.get("/api/health").json()
print(f"health: ready={health['ready']} size={health['size']} "
      f"fingerprint={health['fingerprint'][:12]}...")

response = client.post("/api/query", json={
    "text": "An image with Periodontal Stage Two.", "k": 3,
}).json()
print(f"\ntier {response['tier']}, {response['elapsed_ms']:.1f} ms:")
for rank, item in enumerate(response["results"], start=1):
    print(f"  {rank}. id {item['id']}  score {item['score']:.4f}  "
          f"{item['summary']}  ({item['image_url']})")

png = client.get(response["results"][0]["image_url"])
print(f"\nimage endpoint: {png.status_code}, "
      f"{png.headers['content-type']}, {len(png.content)} bytes")

# errors carry machine-readable codes
for payload, label in (
    ({"text": "", "k": 3}, "empty query"),
    ({"text": "An image with Periodontal Stage Two.", "k": 0}, "k below 1"),
    ({"k": 3}, "missing text"),
):
    r = client.post("/api/query", json=payload)
    print(f"{label}: {r.status_code} {r.json()['detail']['code']}")
