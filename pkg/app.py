#!/usr/bin/env python3
"""
Class-Guided Camouflage Detection - Demo Entry Point

Gradio interface for segmenting an uploaded image by class label with a
trained checkpoint, and for scoring prediction maps against masks.
"""

from config import CONFIG
from app.utils.logger import setup_logger
from app.interface.gradio_app import create_interface


def main():
    """Main entry point for the demo"""
    setup_logger()

    app = create_interface()

    app.launch(
        server_name=CONFIG["server_name"],
        server_port=CONFIG["server_port"],
        show_error=True,
        share=False,
    )


if __name__ == "__main__":
    main()
