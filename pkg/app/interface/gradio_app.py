import os
import logging

import gradio as gr

from config import CONFIG
from app.interface.components.evaluate import get_metrics_placeholder_html, score_pair
from app.interface.components.segment import get_segment_placeholder_html, segment_image
from app.interface.styles.css_styles import get_custom_css

logger = logging.getLogger(__name__)


def create_interface():
    """Create and configure the Gradio interface"""
    default_checkpoint = os.path.join(CONFIG["outputs_dir"], CONFIG["checkpoint_name"])

    with gr.Blocks(
        title="🦎 Class-Guided Camouflage Detection",
        theme=gr.themes.Soft(),
        css=get_custom_css(),
    ) as interface:

        gr.HTML(
            """
        <div style="text-align: center; padding: 20px;">
            <h1>🦎 Class-Guided Camouflage Detection</h1>
            <p>Segment a camouflaged object by naming its class</p>
        </div>
        """
        )

        with gr.Tabs():
            with gr.TabItem("🔍 Segment"):
                with gr.Row():
                    image_input = gr.Image(label="🖼️ Image", type="numpy")
                    prob_output = gr.Image(label="🎯 P1 probability", type="pil")
                label_input = gr.Textbox(label="🏷️ Class label", placeholder="e.g. blob, star, worm, ring", lines=1)
                checkpoint_input = gr.Textbox(label="💾 Checkpoint", value=default_checkpoint, lines=1)
                segment_btn = gr.Button("Segment", variant="primary", size="lg")
                segment_status = gr.HTML(value=get_segment_placeholder_html())

            with gr.TabItem("📏 Metrics"):
                with gr.Row():
                    pred_input = gr.Image(label="Prediction map", type="numpy", image_mode="L")
                    gt_input = gr.Image(label="Ground-truth mask", type="numpy", image_mode="L")
                score_btn = gr.Button("Score", variant="secondary", size="lg")
                metrics_output = gr.HTML(value=get_metrics_placeholder_html())

        segment_btn.click(
            segment_image,
            inputs=[image_input, label_input, checkpoint_input],
            outputs=[prob_output, segment_status],
        )
        score_btn.click(score_pair, inputs=[pred_input, gt_input], outputs=[metrics_output])

    return interface
