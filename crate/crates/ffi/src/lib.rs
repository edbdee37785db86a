// placeholder so the workspace builds; the C ABI lands here
