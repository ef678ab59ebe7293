# scripts/check_local_server.py
import asyncio
import json
import os
import sys

import httpx

BASE_URL = os.getenv("DIWP_BASE_URL", "http://localhost:8000")
API_KEY = os.getenv("API_KEY", "")


async def check_api():
    """Recorrido completo de la API local (requiere un servidor levantado)"""
    print("🧪 Testing DIWP Prediction API")
    print("=" * 50)
    headers = {"X-API-Key": API_KEY}

    async with httpx.AsyncClient(timeout=60.0) as client:

        # 1. Root
        print("\n1️⃣ Testing root endpoint...")
        try:
            response = await client.get(f"{BASE_URL}/")
            print(f"✅ Root: {response.status_code}")
            print(json.dumps(response.json(), indent=2, ensure_ascii=False))
        except Exception as e:
            print(f"❌ Root failed: {e}")

        # 2. Health
        print("\n2️⃣ Testing health check...")
        try:
            response = await client.get(f"{BASE_URL}/health/")
            data = response.json()
            print(f"✅ Health: {response.status_code} ({data['status']})")
            print(f"Service info: {data['service_info']}")
        except Exception as e:
            print(f"❌ Health failed: {e}")

        # 3. Modelo cargado
        print("\n3️⃣ Testing model info...")
        input_dim = None
        try:
            response = await client.get(f"{BASE_URL}/api/v1/model", headers=headers)
            print(f"✅ Model: {response.status_code}")
            if response.status_code == 200:
                data = response.json()
                input_dim = data["model_spec"]["input_dim"]
                print(f"Task: {data['task']}, step: {data['step']}, parámetros: {data['parameter_count']}")
        except Exception as e:
            print(f"❌ Model info failed: {e}")

        # 4. Predicción
        print("\n4️⃣ Testing prediction...")
        if input_dim is None:
            print("⚠️ Sin modelo cargado, se omite la predicción")
            return
        try:
            rows = [[0.0] * input_dim, [1.0] * input_dim]
            response = await client.post(
                f"{BASE_URL}/api/v1/predict",
                json={"features": rows, "n_samples": 20},
                headers=headers,
            )
            print(f"✅ Predict: {response.status_code}")
            if response.status_code == 200:
                data = response.json()
                print(f"Processing time: {data['processing_time_ms']:.2f}ms")
                print(f"Mean: {data['mean']}")
                if data.get("variance") is not None:
                    print(f"Variance: {data['variance']}")
                if data.get("probabilities") is not None:
                    print(f"Probabilities: {data['probabilities']}")
        except Exception as e:
            print(f"❌ Prediction failed: {e}")


if __name__ == "__main__":
    if not API_KEY:
        print("⚠️ API_KEY no definida: /api/v1 responderá 403")
    asyncio.run(check_api())
    sys.exit(0)
