# server.py
"""Punto de entrada para Render: comprueba el checkpoint y arranca uvicorn"""
import os
import sys
from pathlib import Path


def main():
    os.environ.setdefault("ENVIRONMENT", "production")
    port = int(os.environ.get("PORT", 10000))
    checkpoint = os.environ.get("CHECKPOINT_PATH", "")

    print(f"🚀 DIWP Prediction API en puerto {port}")
    if not checkpoint or not Path(checkpoint).is_file():
        # la API arranca igual y /api/v1 responde 503
        print(f"⚠️ CHECKPOINT_PATH='{checkpoint}' no es un fichero")

    try:
        from app.main import app  # noqa: F401
    except Exception as e:
        print(f"❌ No se pudo importar app.main: {e}")
        sys.exit(1)

    import uvicorn

    uvicorn.run("app.main:app", host="0.0.0.0", port=port, workers=1, loop="asyncio",
                log_level="info", access_log=False)


if __name__ == "__main__":
    main()
